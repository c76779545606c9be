#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "cadgmm/matrix.hpp"

namespace cadgmm {

/// Thrown on malformed container files: bad magic, version, truncation,
/// checksum mismatch, or type/name lookups that fail.
class ContainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Writes the self-describing binary container used for checkpoints and
/// dataset caches: magic "CADG", a format version, a sequence of named typed
/// entries, and a trailing FNV-1a checksum. All integers and doubles are
/// little-endian. Entries stream straight to disk; call finish() (or let the
/// destructor do it) to seal the file.
class ContainerWriter {
public:
    explicit ContainerWriter(const std::string& path);
    ~ContainerWriter();
    ContainerWriter(const ContainerWriter&) = delete;
    ContainerWriter& operator=(const ContainerWriter&) = delete;

    void put_u64(const std::string& name, std::uint64_t v);
    void put_f64(const std::string& name, double v);
    void put_string(const std::string& name, const std::string& v);
    void put_matrix(const std::string& name, const Matrix& v);
    void put_u32_array(const std::string& name, std::span<const std::uint32_t> v);
    void put_f64_array(const std::string& name, std::span<const double> v);
    void put_u8_array(const std::string& name, std::span<const std::uint8_t> v);

    void finish();

private:
    struct Impl;
    Impl* impl_;
};

/// Loads a container fully into memory, validating magic, version, and
/// checksum up front. Typed getters throw ContainerError naming the entry on
/// a missing name or type mismatch.
class ContainerReader {
public:
    explicit ContainerReader(const std::string& path);

    bool contains(const std::string& name) const;
    std::vector<std::string> names() const;

    std::uint64_t get_u64(const std::string& name) const;
    double get_f64(const std::string& name) const;
    std::string get_string(const std::string& name) const;
    Matrix get_matrix(const std::string& name) const;
    std::vector<std::uint32_t> get_u32_array(const std::string& name) const;
    std::vector<double> get_f64_array(const std::string& name) const;
    std::vector<std::uint8_t> get_u8_array(const std::string& name) const;

    std::uint32_t version() const noexcept { return version_; }

private:
    struct Entry {
        std::uint8_t tag = 0;
        std::vector<std::uint8_t> payload;
    };
    const Entry& entry(const std::string& name, std::uint8_t tag, const char* type) const;

    std::uint32_t version_ = 0;
    std::map<std::string, Entry> entries_;
};

inline constexpr std::uint32_t kContainerVersion = 1;

}  // namespace cadgmm
