#include "padapt/config.hpp"

#include <fstream>
#include <set>

namespace padapt {

using nlohmann::json;

namespace {

void expect_keys(const json& obj, const char* context, const std::set<std::string>& allowed) {
    check<ConfigError>(obj.is_object(), "config: '", context, "' must be an object");
    for (const auto& [key, value] : obj.items()) {
        check<ConfigError>(allowed.count(key) > 0, "config: unknown key '", key, "' in ", context);
    }
}

template <typename T>
T field(const json& obj, const char* context, const char* key, T fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError(concat("config: bad value for '", key, "' in ", context));
    }
}

}  // namespace

const std::vector<std::string>& default_family_order() {
    // Alternates families that leave the source model confident with families
    // that crush confidence, so consecutive domains differ in batch confidence.
    static const std::vector<std::string> order = {
        "gaussian_noise", "brightness", "shot_noise",  "contrast",    "impulse_noise",
        "fog",            "defocus_blur", "jpeg_like", "motion_blur", "pixelate",
    };
    return order;
}

void DataConfig::validate() const {
    check<ConfigError>(!path.empty(), "config: data.path is empty");
    check<ConfigError>(classes >= 2 && classes <= 10, "config: data.classes must be in [2,10], got ",
                       classes);
    check<ConfigError>(train_size >= classes, "config: data.train_size must be >= classes");
    check<ConfigError>(test_size >= 1, "config: data.test_size must be >= 1");
    check<ConfigError>(channels >= 1 && channels <= 3, "config: data.channels must be in [1,3]");
    check<ConfigError>(height >= 8 && width >= 8 && height % 2 == 0 && width % 2 == 0,
                       "config: data geometry must be even and >= 8x8");
}

Schedule ScheduleConfig::to_schedule() const {
    validate();
    Schedule schedule;
    if (kind == "standard") {
        schedule.kind = ScheduleKind::kStandard;
    } else if (kind == "gradual") {
        schedule.kind = ScheduleKind::kGradual;
    } else {
        schedule.kind = ScheduleKind::kRounds;
    }
    const std::vector<std::string>& names = families.empty() ? default_family_order() : families;
    for (const std::string& name : names) {
        schedule.families.push_back(parse_family(name));
    }
    schedule.severity = severity;
    schedule.rounds = rounds;
    return schedule;
}

void ScheduleConfig::validate() const {
    check<ConfigError>(kind == "standard" || kind == "gradual" || kind == "rounds",
                       "config: schedule.kind must be standard|gradual|rounds, got '", kind, "'");
    check<ConfigError>(severity >= 0 && severity <= 5, "config: schedule.severity must be in [0,5]");
    check<ConfigError>(rounds >= 1, "config: schedule.rounds must be >= 1");
    for (const std::string& name : families) {
        parse_family(name);  // throws on unknown names
    }
}

void SweepConfig::validate() const {
    if (axis.empty()) {
        return;
    }
    check<ConfigError>(axis == "prompt_size" || axis == "placement" || axis == "relative_offset" ||
                           axis == "alpha",
                       "config: sweep.axis must be prompt_size|placement|relative_offset|alpha, got '",
                       axis, "'");
    check<ConfigError>(!values.empty(), "config: sweep.values is empty");
}

void RunConfig::validate() const {
    check<ConfigError>(!out_dir.empty(), "config: out_dir is empty");
    check<ConfigError>(!checkpoint.empty(), "config: checkpoint path is empty");
    data.validate();
    train.validate();
    adapt.validate();
    schedule.validate();
    sweep.validate();
    check<ConfigError>(adapt.prompt_size <= data.height && adapt.prompt_size <= data.width,
                       "config: adapt.prompt_size ", adapt.prompt_size, " exceeds image ", data.height,
                       "x", data.width);
}

RunConfig parse_config_json(const json& doc) {
    expect_keys(doc, "<root>",
                {"seed", "out_dir", "checkpoint", "data", "train", "adapt", "schedule", "sweep"});
    RunConfig cfg;
    cfg.seed = field<std::uint64_t>(doc, "<root>", "seed", cfg.seed);
    cfg.out_dir = field<std::string>(doc, "<root>", "out_dir", cfg.out_dir);
    cfg.checkpoint = field<std::string>(doc, "<root>", "checkpoint", cfg.checkpoint);

    if (doc.contains("data")) {
        const json& d = doc.at("data");
        expect_keys(d, "data", {"path", "classes", "train_size", "test_size", "channels", "height", "width"});
        cfg.data.path = field<std::string>(d, "data", "path", cfg.data.path);
        cfg.data.classes = field<int>(d, "data", "classes", cfg.data.classes);
        cfg.data.train_size = field<int>(d, "data", "train_size", cfg.data.train_size);
        cfg.data.test_size = field<int>(d, "data", "test_size", cfg.data.test_size);
        cfg.data.channels = field<int>(d, "data", "channels", cfg.data.channels);
        cfg.data.height = field<int>(d, "data", "height", cfg.data.height);
        cfg.data.width = field<int>(d, "data", "width", cfg.data.width);
    }
    if (doc.contains("train")) {
        const json& t = doc.at("train");
        expect_keys(t, "train", {"epochs", "lr", "momentum", "batch_size"});
        cfg.train.epochs = field<int>(t, "train", "epochs", cfg.train.epochs);
        cfg.train.lr = field<double>(t, "train", "lr", cfg.train.lr);
        cfg.train.momentum = field<double>(t, "train", "momentum", cfg.train.momentum);
        cfg.train.batch_size = field<int>(t, "train", "batch_size", cfg.train.batch_size);
    }
    if (doc.contains("adapt")) {
        const json& a = doc.at("adapt");
        expect_keys(a, "adapt",
                    {"prompt_lr", "prompt_momentum", "ema_momentum", "alpha", "shift_threshold", "xi",
                     "batch_size", "augment", "placement", "fixed_anchor", "prompt_size",
                     "relative_offset", "warmup_epochs", "signed_delta_conf", "nonneg_eta",
                     "disable_dsp", "disable_dap"});
        AdaptConfig& ac = cfg.adapt;
        ac.prompt_lr = field<double>(a, "adapt", "prompt_lr", ac.prompt_lr);
        ac.prompt_momentum = field<double>(a, "adapt", "prompt_momentum", ac.prompt_momentum);
        ac.ema_momentum = field<double>(a, "adapt", "ema_momentum", ac.ema_momentum);
        ac.alpha = field<double>(a, "adapt", "alpha", ac.alpha);
        ac.shift_threshold = field<double>(a, "adapt", "shift_threshold", ac.shift_threshold);
        ac.xi = field<double>(a, "adapt", "xi", ac.xi);
        ac.batch_size = field<int>(a, "adapt", "batch_size", ac.batch_size);
        const std::string augment = field<std::string>(a, "adapt", "augment", "default");
        if (augment == "identity") {
            ac.augment = AugmentPolicy::identity();
        } else {
            check<ConfigError>(augment == "default", "config: adapt.augment must be default|identity");
            ac.augment = AugmentPolicy{};
        }
        const std::string placement = field<std::string>(a, "adapt", "placement", "random");
        if (placement == "fixed") {
            ac.placement = PlacementPolicy::kFixedAnchor;
        } else {
            check<ConfigError>(placement == "random", "config: adapt.placement must be random|fixed");
            ac.placement = PlacementPolicy::kRandomPerBatch;
        }
        if (a.contains("fixed_anchor")) {
            const json& anchor = a.at("fixed_anchor");
            check<ConfigError>(anchor.is_array() && anchor.size() == 2,
                               "config: adapt.fixed_anchor must be [row, col]");
            ac.fixed_row = anchor.at(0).get<int>();
            ac.fixed_col = anchor.at(1).get<int>();
        }
        ac.prompt_size = field<int>(a, "adapt", "prompt_size", ac.prompt_size);
        ac.relative_offset = field<int>(a, "adapt", "relative_offset", ac.relative_offset);
        ac.warmup_epochs = field<int>(a, "adapt", "warmup_epochs", ac.warmup_epochs);
        ac.signed_delta_conf = field<bool>(a, "adapt", "signed_delta_conf", ac.signed_delta_conf);
        ac.nonneg_eta = field<bool>(a, "adapt", "nonneg_eta", ac.nonneg_eta);
        ac.disable_dsp = field<bool>(a, "adapt", "disable_dsp", ac.disable_dsp);
        ac.disable_dap = field<bool>(a, "adapt", "disable_dap", ac.disable_dap);
    }
    if (doc.contains("schedule")) {
        const json& s = doc.at("schedule");
        expect_keys(s, "schedule", {"kind", "families", "severity", "rounds"});
        cfg.schedule.kind = field<std::string>(s, "schedule", "kind", cfg.schedule.kind);
        if (s.contains("families")) {
            cfg.schedule.families = s.at("families").get<std::vector<std::string>>();
        }
        cfg.schedule.severity = field<int>(s, "schedule", "severity", cfg.schedule.severity);
        cfg.schedule.rounds = field<int>(s, "schedule", "rounds", cfg.schedule.rounds);
    }
    if (doc.contains("sweep")) {
        const json& s = doc.at("sweep");
        expect_keys(s, "sweep", {"axis", "values"});
        cfg.sweep.axis = field<std::string>(s, "sweep", "axis", cfg.sweep.axis);
        if (s.contains("values")) {
            for (const json& v : s.at("values")) {
                cfg.sweep.values.push_back(v.is_string() ? v.get<std::string>() : v.dump());
            }
        }
    }

    // adapt.seed mirrors the top-level seed; the adaptation loop derives its
    // independent streams from it.
    cfg.adapt.seed = cfg.seed;
    cfg.train.seed = cfg.seed;
    cfg.validate();
    return cfg;
}

RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    check<MissingArtifactError>(in.good(), "config file '", path.string(), "' not found");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(concat("config '", path.string(), "': ", e.what()));
    }
    return parse_config_json(doc);
}

json config_echo(const RunConfig& cfg) {
    json doc;
    doc["seed"] = cfg.seed;
    doc["out_dir"] = cfg.out_dir;
    doc["checkpoint"] = cfg.checkpoint;
    doc["data"] = {{"path", cfg.data.path},       {"classes", cfg.data.classes},
                   {"train_size", cfg.data.train_size}, {"test_size", cfg.data.test_size},
                   {"channels", cfg.data.channels},     {"height", cfg.data.height},
                   {"width", cfg.data.width}};
    doc["train"] = {{"epochs", cfg.train.epochs},
                    {"lr", cfg.train.lr},
                    {"momentum", cfg.train.momentum},
                    {"batch_size", cfg.train.batch_size}};
    const AdaptConfig& a = cfg.adapt;
    doc["adapt"] = {{"prompt_lr", a.prompt_lr},
                    {"prompt_momentum", a.prompt_momentum},
                    {"ema_momentum", a.ema_momentum},
                    {"alpha", a.alpha},
                    {"shift_threshold", a.shift_threshold},
                    {"xi", a.xi},
                    {"batch_size", a.batch_size},
                    {"augment", a.augment.is_identity() ? "identity" : "default"},
                    {"placement", a.placement == PlacementPolicy::kFixedAnchor ? "fixed" : "random"},
                    {"fixed_anchor", {a.fixed_row, a.fixed_col}},
                    {"prompt_size", a.prompt_size},
                    {"relative_offset", a.relative_offset},
                    {"warmup_epochs", a.warmup_epochs},
                    {"signed_delta_conf", a.signed_delta_conf},
                    {"nonneg_eta", a.nonneg_eta},
                    {"disable_dsp", a.disable_dsp},
                    {"disable_dap", a.disable_dap}};
    doc["schedule"] = {{"kind", cfg.schedule.kind},
                       {"families", cfg.schedule.families.empty() ? default_family_order()
                                                                  : cfg.schedule.families},
                       {"severity", cfg.schedule.severity},
                       {"rounds", cfg.schedule.rounds}};
    if (!cfg.sweep.axis.empty()) {
        doc["sweep"] = {{"axis", cfg.sweep.axis}, {"values", cfg.sweep.values}};
    }
    return doc;
}

}  // namespace padapt
