#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "padapt/adapt.hpp"
#include "padapt/classifier.hpp"
#include "padapt/data.hpp"

namespace padapt {

struct DataConfig {
    std::string path = "data/glyphs.tns";
    int classes = 10;
    int train_size = 5000;
    int test_size = 1000;
    int channels = 3;
    int height = 32;
    int width = 32;

    InputGeometry geometry() const { return {channels, height, width}; }
    void validate() const;
};

struct ScheduleConfig {
    std::string kind = "standard";
    std::vector<std::string> families;  // empty = default list
    int severity = 4;
    int rounds = 3;

    Schedule to_schedule() const;
    void validate() const;
};

struct SweepConfig {
    std::string axis;                 // prompt_size | placement | relative_offset | alpha
    std::vector<std::string> values;  // parsed per axis

    void validate() const;
};

// One JSON document drives every command; unknown keys are rejected and the
// effective configuration is echoed into each summary.
struct RunConfig {
    std::uint64_t seed = 7;
    std::string out_dir = "runs/run";
    std::string checkpoint = "data/checkpoint.ckpt";
    DataConfig data;
    TrainConfig train;
    AdaptConfig adapt;
    ScheduleConfig schedule;
    SweepConfig sweep;

    void validate() const;
};

const std::vector<std::string>& default_family_order();

RunConfig parse_config_json(const nlohmann::json& doc);
RunConfig load_config_file(const std::filesystem::path& path);
nlohmann::json config_echo(const RunConfig& cfg);

}  // namespace padapt
