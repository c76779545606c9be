#pragma once

#include <string>

#include "cadgmm/dataset.hpp"
#include "cadgmm/model.hpp"
#include "cadgmm/trainer.hpp"

namespace cadgmm {

/// One run's full configuration: dataset pointers, architecture, training
/// settings, and evaluation options. Parsed from sectioned key = value text;
/// unknown keys are rejected. `echo()` renders the effective configuration
/// back out in a stable order, and parsing that echo reproduces the config.
struct RunConfig {
    std::string recipe_path;  // [dataset] recipe
    std::string cache_path;   // [dataset] cache
    ModelConfig model;
    TrainConfig train;
    double eval_threshold_ratio = -1.0;  // < 0: dataset anomaly ratio
    std::size_t eval_batch_size = 0;     // 0: training batch size
    std::string out_dir;                 // [output] dir

    static RunConfig parse(const std::string& text, const std::string& origin);
    static RunConfig from_file(const std::string& path);

    /// Applies one "section.key=value" override (the CLI flag form).
    void set(const std::string& dotted_key, const std::string& value,
             const std::string& origin);

    std::string echo() const;
};

}  // namespace cadgmm
