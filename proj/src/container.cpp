#include "cadgmm/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "cadgmm/rng.hpp"

namespace cadgmm {

namespace {

constexpr char kMagic[4] = {'C', 'A', 'D', 'G'};

enum Tag : std::uint8_t {
    kEnd = 0,
    kU64 = 1,
    kF64 = 2,
    kString = 3,
    kMatrix = 4,
    kU32Array = 5,
    kF64Array = 6,
    kU8Array = 7,
};

void append_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void append_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void append_f64(std::vector<std::uint8_t>& out, double v) {
    append_u64(out, std::bit_cast<std::uint64_t>(v));
}

std::uint16_t read_u16(const std::uint8_t* p) {
    return static_cast<std::uint16_t>(p[0] | (std::uint16_t(p[1]) << 8));
}

std::uint32_t read_u32(const std::uint8_t* p) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(p[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(const std::uint8_t* p) {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(p[i]) << (8 * i);
    return v;
}

double read_f64(const std::uint8_t* p) { return std::bit_cast<double>(read_u64(p)); }

}  // namespace

struct ContainerWriter::Impl {
    std::ofstream file;
    std::string path;
    std::uint64_t checksum = 14695981039346656037ULL;  // FNV offset basis
    bool finished = false;

    void write(const std::vector<std::uint8_t>& bytes) {
        // The checksum covers everything after the magic, terminator included.
        checksum = fnv1a(bytes.data(), bytes.size(), checksum);
        file.write(reinterpret_cast<const char*>(bytes.data()),
                   static_cast<std::streamsize>(bytes.size()));
        if (!file) throw ContainerError("container: write failed for " + path);
    }

    void entry(std::uint8_t tag, const std::string& name,
               const std::vector<std::uint8_t>& payload) {
        if (finished) throw ContainerError("container: write after finish()");
        if (name.size() > 0xffff) throw ContainerError("container: entry name too long");
        std::vector<std::uint8_t> head;
        head.push_back(tag);
        append_u16(head, static_cast<std::uint16_t>(name.size()));
        head.insert(head.end(), name.begin(), name.end());
        append_u64(head, payload.size());
        write(head);
        write(payload);
    }
};

ContainerWriter::ContainerWriter(const std::string& path) : impl_(new Impl) {
    impl_->path = path;
    impl_->file.open(path, std::ios::binary | std::ios::trunc);
    if (!impl_->file) {
        delete impl_;
        throw ContainerError("container: cannot open " + path + " for writing");
    }
    impl_->file.write(kMagic, 4);
    std::vector<std::uint8_t> head;
    append_u32(head, kContainerVersion);
    append_u32(head, 0);  // reserved
    impl_->write(head);
}

ContainerWriter::~ContainerWriter() {
    try {
        if (impl_ && !impl_->finished) finish();
    } catch (...) {
    }
    delete impl_;
}

void ContainerWriter::put_u64(const std::string& name, std::uint64_t v) {
    std::vector<std::uint8_t> payload;
    append_u64(payload, v);
    impl_->entry(kU64, name, payload);
}

void ContainerWriter::put_f64(const std::string& name, double v) {
    std::vector<std::uint8_t> payload;
    append_f64(payload, v);
    impl_->entry(kF64, name, payload);
}

void ContainerWriter::put_string(const std::string& name, const std::string& v) {
    std::vector<std::uint8_t> payload(v.begin(), v.end());
    impl_->entry(kString, name, payload);
}

void ContainerWriter::put_matrix(const std::string& name, const Matrix& v) {
    std::vector<std::uint8_t> payload;
    payload.reserve(16 + v.size() * 8);
    append_u64(payload, v.rows());
    append_u64(payload, v.cols());
    for (std::size_t i = 0; i < v.size(); ++i) append_f64(payload, v.data()[i]);
    impl_->entry(kMatrix, name, payload);
}

void ContainerWriter::put_u32_array(const std::string& name, std::span<const std::uint32_t> v) {
    std::vector<std::uint8_t> payload;
    payload.reserve(8 + v.size() * 4);
    append_u64(payload, v.size());
    for (std::uint32_t x : v) append_u32(payload, x);
    impl_->entry(kU32Array, name, payload);
}

void ContainerWriter::put_f64_array(const std::string& name, std::span<const double> v) {
    std::vector<std::uint8_t> payload;
    payload.reserve(8 + v.size() * 8);
    append_u64(payload, v.size());
    for (double x : v) append_f64(payload, x);
    impl_->entry(kF64Array, name, payload);
}

void ContainerWriter::put_u8_array(const std::string& name, std::span<const std::uint8_t> v) {
    std::vector<std::uint8_t> payload;
    payload.reserve(8 + v.size());
    append_u64(payload, v.size());
    payload.insert(payload.end(), v.begin(), v.end());
    impl_->entry(kU8Array, name, payload);
}

void ContainerWriter::finish() {
    if (impl_->finished) return;
    std::vector<std::uint8_t> terminator{kEnd};
    impl_->write(terminator);
    std::vector<std::uint8_t> sum;
    append_u64(sum, impl_->checksum);
    impl_->file.write(reinterpret_cast<const char*>(sum.data()), 8);
    impl_->file.close();
    if (!impl_->file) throw ContainerError("container: close failed for " + impl_->path);
    impl_->finished = true;
}

ContainerReader::ContainerReader(const std::string& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw ContainerError("container: cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(file)),
                                    std::istreambuf_iterator<char>());
    if (bytes.size() < 4 + 8 + 1 + 8) throw ContainerError("container: " + path + " truncated");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw ContainerError("container: " + path + " has wrong magic");
    }
    const std::size_t body_end = bytes.size() - 8;  // trailing checksum
    const std::uint64_t stored = read_u64(bytes.data() + body_end);
    const std::uint64_t actual = fnv1a(bytes.data() + 4, body_end - 4);
    if (stored != actual) throw ContainerError("container: " + path + " checksum mismatch");

    std::size_t pos = 4;
    auto need = [&](std::size_t count) {
        if (pos + count > body_end) {
            throw ContainerError("container: " + path + " truncated entry");
        }
    };
    need(8);
    version_ = read_u32(bytes.data() + pos);
    pos += 8;  // version + reserved
    if (version_ != kContainerVersion) {
        throw ContainerError("container: " + path + " has unsupported version " +
                             std::to_string(version_));
    }
    while (true) {
        need(1);
        const std::uint8_t tag = bytes[pos++];
        if (tag == kEnd) break;
        need(2);
        const std::uint16_t name_len = read_u16(bytes.data() + pos);
        pos += 2;
        need(name_len);
        std::string name(reinterpret_cast<const char*>(bytes.data() + pos), name_len);
        pos += name_len;
        need(8);
        const std::uint64_t payload_len = read_u64(bytes.data() + pos);
        pos += 8;
        need(payload_len);
        Entry e;
        e.tag = tag;
        e.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                         bytes.begin() + static_cast<std::ptrdiff_t>(pos + payload_len));
        pos += payload_len;
        if (!entries_.emplace(std::move(name), std::move(e)).second) {
            throw ContainerError("container: " + path + " has a duplicate entry name");
        }
    }
    if (pos != body_end) throw ContainerError("container: " + path + " has trailing bytes");
}

bool ContainerReader::contains(const std::string& name) const {
    return entries_.find(name) != entries_.end();
}

std::vector<std::string> ContainerReader::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [name, e] : entries_) out.push_back(name);
    return out;
}

const ContainerReader::Entry& ContainerReader::entry(const std::string& name, std::uint8_t tag,
                                                     const char* type) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ContainerError("container: no entry \"" + name + "\"");
    if (it->second.tag != tag) {
        throw ContainerError("container: entry \"" + name + "\" is not a " + type);
    }
    return it->second;
}

std::uint64_t ContainerReader::get_u64(const std::string& name) const {
    const Entry& e = entry(name, kU64, "u64");
    if (e.payload.size() != 8) throw ContainerError("container: bad u64 \"" + name + "\"");
    return read_u64(e.payload.data());
}

double ContainerReader::get_f64(const std::string& name) const {
    const Entry& e = entry(name, kF64, "f64");
    if (e.payload.size() != 8) throw ContainerError("container: bad f64 \"" + name + "\"");
    return read_f64(e.payload.data());
}

std::string ContainerReader::get_string(const std::string& name) const {
    const Entry& e = entry(name, kString, "string");
    return std::string(e.payload.begin(), e.payload.end());
}

Matrix ContainerReader::get_matrix(const std::string& name) const {
    const Entry& e = entry(name, kMatrix, "matrix");
    if (e.payload.size() < 16) throw ContainerError("container: bad matrix \"" + name + "\"");
    const std::uint64_t rows = read_u64(e.payload.data());
    const std::uint64_t cols = read_u64(e.payload.data() + 8);
    if (e.payload.size() != 16 + rows * cols * 8) {
        throw ContainerError("container: matrix \"" + name + "\" size mismatch");
    }
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) {
        m.data()[i] = read_f64(e.payload.data() + 16 + i * 8);
    }
    return m;
}

std::vector<std::uint32_t> ContainerReader::get_u32_array(const std::string& name) const {
    const Entry& e = entry(name, kU32Array, "u32 array");
    if (e.payload.size() < 8) throw ContainerError("container: bad array \"" + name + "\"");
    const std::uint64_t count = read_u64(e.payload.data());
    if (e.payload.size() != 8 + count * 4) {
        throw ContainerError("container: array \"" + name + "\" size mismatch");
    }
    std::vector<std::uint32_t> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = read_u32(e.payload.data() + 8 + i * 4);
    return out;
}

std::vector<double> ContainerReader::get_f64_array(const std::string& name) const {
    const Entry& e = entry(name, kF64Array, "f64 array");
    if (e.payload.size() < 8) throw ContainerError("container: bad array \"" + name + "\"");
    const std::uint64_t count = read_u64(e.payload.data());
    if (e.payload.size() != 8 + count * 8) {
        throw ContainerError("container: array \"" + name + "\" size mismatch");
    }
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = read_f64(e.payload.data() + 8 + i * 8);
    return out;
}

std::vector<std::uint8_t> ContainerReader::get_u8_array(const std::string& name) const {
    const Entry& e = entry(name, kU8Array, "u8 array");
    if (e.payload.size() < 8) throw ContainerError("container: bad array \"" + name + "\"");
    const std::uint64_t count = read_u64(e.payload.data());
    if (e.payload.size() != 8 + count) {
        throw ContainerError("container: array \"" + name + "\" size mismatch");
    }
    return std::vector<std::uint8_t>(e.payload.begin() + 8, e.payload.end());
}

}  // namespace cadgmm
