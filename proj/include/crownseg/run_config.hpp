#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "crownseg/distance_targets.hpp"
#include "crownseg/network.hpp"
#include "crownseg/sampler.hpp"
#include "crownseg/synthdata.hpp"
#include "crownseg/trainer.hpp"

namespace crownseg {

// Flat key=value settings for every command. Keys are grouped by prefix
// (scene., model., train., sampler., targets., predict.) plus `seed`. All
// keys exist from the start with the library defaults; setting an unknown
// key raises ConfigError.
class RunConfig {
public:
    RunConfig();

    /// Applies `key = value` lines (config file syntax).
    void merge_text(const std::string& text, const std::string& source);
    void merge_file(const std::string& path);
    /// Applies one `key=value` override.
    void merge_assignment(const std::string& assignment);
    void set(const std::string& key, const std::string& value);
    const std::string& get(const std::string& key) const;

    SceneConfig scene() const;
    ModelConfig model() const;
    TrainConfig train() const;
    SamplerConfig sampler() const;
    DistanceTargetOptions targets() const;
    std::size_t predict_tile() const;
    std::vector<double> predict_overlaps() const;
    std::uint64_t seed() const;

    /// Every key in sorted order as `key = value` lines.
    std::string echo() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace crownseg
