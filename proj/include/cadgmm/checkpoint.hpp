#pragma once

#include <cstdint>
#include <string>

#include "cadgmm/dataset.hpp"
#include "cadgmm/gmm.hpp"
#include "cadgmm/model.hpp"

namespace cadgmm {

/// Everything needed to score new data exactly as at training time: the
/// architecture, trained parameters, frozen mixture, the normalization
/// statistics the model saw, and provenance (seed, dataset fingerprint,
/// effective config text).
struct Checkpoint {
    ModelConfig model;
    ParamStore params;
    GmmState gmm;
    FeatureStats stats;
    std::uint64_t dataset_fingerprint = 0;
    std::uint64_t seed = 0;
    bool ablate_graph = false;
    std::string config_echo;
};

void save_checkpoint(const std::string& path, const Checkpoint& cp);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cadgmm
