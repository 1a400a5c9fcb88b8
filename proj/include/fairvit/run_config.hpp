#pragma once

#include <string>

#include "fairvit/data.hpp"
#include "fairvit/metrics.hpp"
#include "fairvit/model.hpp"
#include "fairvit/trainer.hpp"

namespace fairvit {

// Merged configuration for CLI runs, loaded from a flat key=value text file
// with command-line overrides applied on top. The fully resolved config is
// echoed into each run directory so a run can be reproduced from its artifacts.
struct RunConfig {
    ModelConfig model;
    TrainConfig train;
    SyntheticSpec synth;
    ProbeConfig probe;

    static RunConfig from_file(const std::string& path);
    void set(const std::string& key, const std::string& value);  // throws ConfigError on unknown key
    std::string to_text() const;                                 // canonical, key-sorted
    void validate() const;
};

}  // namespace fairvit
