#include "padapt/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>

#include "padapt/checkpoint.hpp"

namespace padapt {

using nlohmann::json;

namespace {

// Fixed-width round-trippable float formatting keeps CSV output byte-stable.
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string checksum_of_model(const Classifier& model) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(model.weight_checksum()));
    return buf;
}

DetectorStats detector_stats(const MetricsLog& log) {
    DetectorStats stats;
    stats.batches = static_cast<int>(log.rows.size());
    std::vector<int> boundaries;
    for (std::size_t i = 1; i < log.rows.size(); ++i) {
        if (log.rows[i].domain_index != log.rows[i - 1].domain_index) {
            boundaries.push_back(static_cast<int>(i));
        }
    }
    std::vector<int> detections;
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        if (log.rows[i].shift) {
            detections.push_back(static_cast<int>(i));
        }
    }
    stats.boundaries = static_cast<int>(boundaries.size());
    stats.detections = static_cast<int>(detections.size());
    const auto in_window = [](int boundary, int detection) {
        return detection >= boundary && detection <= boundary + 2;
    };
    for (const int b : boundaries) {
        for (const int d : detections) {
            if (in_window(b, d)) {
                ++stats.detected_within_2;
                break;
            }
        }
    }
    for (const int d : detections) {
        bool matched = false;
        for (const int b : boundaries) {
            if (in_window(b, d)) {
                matched = true;
                break;
            }
        }
        if (!matched) {
            ++stats.false_triggers;
        }
    }
    return stats;
}

void write_run_outputs(const RunConfig& cfg, const AdaptRunResult& result) {
    const std::filesystem::path out(cfg.out_dir);
    std::filesystem::create_directories(out);
    write_text_file(out / "metrics.csv", metrics_csv(result.log));
    write_text_file(out / "events.csv", events_csv(result.log));
    write_text_file(out / "summary.json", summary_json(result.summary).dump(2) + "\n");
    write_text_file(out / "report.txt", report_text(result.summary));
    save_prompts(out / "prompts.ckpt", result.prompts);
    // Wall-clock info lives only in this sidecar so the other outputs stay
    // byte-identical across reruns.
    const auto now = std::chrono::system_clock::now();
    write_text_file(out / "run_info.txt",
                    concat("completed_unix_ms ",
                           std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch())
                               .count(),
                           "\n"));
}

}  // namespace

double dataset_error(const Classifier& model, const Tensor& images, const std::vector<int>& labels,
                     int chunk) {
    const int total = images.extent(0);
    const int chw = images.extent(1) * images.extent(2) * images.extent(3);
    int wrong = 0;
    for (int start = 0; start < total; start += chunk) {
        const int count = std::min(chunk, total - start);
        Tensor batch({count, images.extent(1), images.extent(2), images.extent(3)});
        std::copy_n(images.data() + static_cast<std::int64_t>(start) * chw,
                    static_cast<std::int64_t>(count) * chw, batch.data());
        const Prediction pred = model.predict(batch);
        for (int i = 0; i < count; ++i) {
            wrong += pred.predicted[static_cast<std::size_t>(i)] !=
                             labels[static_cast<std::size_t>(start + i)]
                         ? 1
                         : 0;
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(total);
}

AdaptRunResult run_adaptation(const RunConfig& cfg, const Classifier& frozen, const GlyphDataset& train,
                              const GlyphDataset& test) {
    check<ConfigError>(frozen.frozen(), "run_adaptation: classifier must be frozen");
    const DomainStream stream = build_stream(test, cfg.schedule.to_schedule(), cfg.adapt.batch_size,
                                             Rng::derive(cfg.seed, "stream"));

    AdaptState state = AdaptState::init(cfg.adapt, frozen.geometry());
    WarmupConfig warmup;
    warmup.epochs = cfg.adapt.warmup_epochs;
    warmup.lr = cfg.adapt.prompt_lr;
    warmup.batch_size = cfg.adapt.batch_size;
    warmup.seed = cfg.seed;
    warmup.train_dsp = !cfg.adapt.disable_dsp;
    warmup.train_dap = !cfg.adapt.disable_dap;
    init_prompts(state.student, frozen, train.images, train.labels, warmup);
    state.teacher.dsp.values = state.student.dsp.values;
    state.teacher.dap.values = state.student.dap.values;
    // Importance anchors start at the warmed values.
    state.importance = ImportanceState::init(state.student.dap.values);

    AdaptRunResult result;
    result.log = run_stream(state, frozen, stream);
    result.source_errors = evaluate_stream(frozen, stream);
    result.summary = summarize(cfg, frozen, result.log, result.source_errors);
    result.prompts = state.student;
    return result;
}

RunSummary summarize(const RunConfig& cfg, const Classifier& frozen, const MetricsLog& log,
                     const std::vector<double>& source_errors) {
    check<std::invalid_argument>(log.rows.size() == source_errors.size(),
                                 "summarize: ", log.rows.size(), " rows vs ", source_errors.size(),
                                 " source errors");
    RunSummary summary;
    summary.seed = cfg.seed;
    summary.schedule_kind = cfg.schedule.kind;
    summary.config = config_echo(cfg);
    summary.model_checksum = checksum_of_model(frozen);

    double err_sum = 0.0, src_sum = 0.0, dsp_sum = 0.0, dap_sum = 0.0, pen_sum = 0.0;
    int max_round = 1;
    for (std::size_t i = 0; i < log.rows.size(); ++i) {
        const MetricsRow& row = log.rows[i];
        err_sum += row.batch_error;
        src_sum += source_errors[i];
        dsp_sum += row.loss_dsp;
        dap_sum += row.loss_dap;
        pen_sum += row.loss_penalty;
        max_round = std::max(max_round, row.round);
        if (summary.domains.empty() || summary.domains.back().domain_index != row.domain_index) {
            DomainStat stat;
            stat.domain_index = row.domain_index;
            stat.corruption = row.corruption;
            stat.severity = row.severity;
            stat.round = row.round;
            summary.domains.push_back(stat);
        }
        DomainStat& stat = summary.domains.back();
        ++stat.batches;
        stat.mean_error += row.batch_error;
        stat.source_mean_error += source_errors[i];
    }
    const double n = static_cast<double>(log.rows.size());
    summary.mean_error = err_sum / n;
    summary.source_mean_error = src_sum / n;
    summary.gain_pp = (summary.source_mean_error - summary.mean_error) * 100.0;
    summary.mean_loss_dsp = dsp_sum / n;
    summary.mean_loss_dap = dap_sum / n;
    summary.mean_loss_penalty = pen_sum / n;
    for (DomainStat& stat : summary.domains) {
        stat.mean_error /= stat.batches;
        stat.source_mean_error /= stat.batches;
    }
    if (cfg.schedule.kind == "rounds") {
        summary.round_means.assign(static_cast<std::size_t>(max_round), 0.0);
        summary.source_round_means.assign(static_cast<std::size_t>(max_round), 0.0);
        std::vector<int> counts(static_cast<std::size_t>(max_round), 0);
        for (std::size_t i = 0; i < log.rows.size(); ++i) {
            const std::size_t r = static_cast<std::size_t>(log.rows[i].round - 1);
            summary.round_means[r] += log.rows[i].batch_error;
            summary.source_round_means[r] += source_errors[i];
            ++counts[r];
        }
        for (std::size_t r = 0; r < summary.round_means.size(); ++r) {
            summary.round_means[r] /= counts[r];
            summary.source_round_means[r] /= counts[r];
        }
    }
    summary.detector = detector_stats(log);
    return summary;
}

std::string metrics_csv(const MetricsLog& log) {
    std::string out =
        "step,domain_truth,corruption,severity,batch_error,confidence,delta_conf,shift_triggered,"
        "loss_dsp,loss_dap,loss_penalty\n";
    for (const MetricsRow& row : log.rows) {
        out += concat(row.step, ",", row.domain_index, ",", row.corruption, ",", row.severity, ",",
                      fmt_double(row.batch_error), ",", fmt_double(row.confidence), ",",
                      fmt_double(row.delta_conf), ",", row.shift ? 1 : 0, ",", fmt_double(row.loss_dsp),
                      ",", fmt_double(row.loss_dap), ",", fmt_double(row.loss_penalty), "\n");
    }
    return out;
}

std::string events_csv(const MetricsLog& log) {
    std::string out = "step,event,delta_conf,sum_eta,domain_after\n";
    for (const ShiftEvent& event : log.events) {
        out += concat(event.step, ",shift,", fmt_double(event.delta_conf), ",",
                      fmt_double(event.sum_eta), ",", event.domain_after, "\n");
    }
    return out;
}

json summary_json(const RunSummary& summary) {
    json doc;
    doc["seed"] = summary.seed;
    doc["schedule"] = summary.schedule_kind;
    doc["mean_error"] = summary.mean_error;
    doc["source_mean_error"] = summary.source_mean_error;
    doc["gain_pp"] = summary.gain_pp;
    doc["model_checksum"] = summary.model_checksum;
    doc["mean_loss_dsp"] = summary.mean_loss_dsp;
    doc["mean_loss_dap"] = summary.mean_loss_dap;
    doc["mean_loss_penalty"] = summary.mean_loss_penalty;
    doc["domains"] = json::array();
    for (const DomainStat& stat : summary.domains) {
        doc["domains"].push_back({{"domain", stat.domain_index},
                                  {"corruption", stat.corruption},
                                  {"severity", stat.severity},
                                  {"round", stat.round},
                                  {"batches", stat.batches},
                                  {"mean_error", stat.mean_error},
                                  {"source_mean_error", stat.source_mean_error}});
    }
    if (!summary.round_means.empty()) {
        doc["round_means"] = summary.round_means;
        doc["source_round_means"] = summary.source_round_means;
    }
    doc["detector"] = {{"batches", summary.detector.batches},
                       {"boundaries", summary.detector.boundaries},
                       {"detected_within_2", summary.detector.detected_within_2},
                       {"detections", summary.detector.detections},
                       {"false_triggers", summary.detector.false_triggers}};
    doc["config"] = summary.config;
    return doc;
}

std::string report_text(const RunSummary& summary) {
    std::string out;
    out += concat("schedule: ", summary.schedule_kind, "   seed: ", summary.seed, "\n\n");
    out += "domain  corruption       sev round batches  source_err  adapted_err\n";
    for (const DomainStat& stat : summary.domains) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-7d %-16s %-3d %-5d %-8d %-11.4f %-11.4f\n",
                      stat.domain_index, stat.corruption.c_str(), stat.severity, stat.round,
                      stat.batches, stat.source_mean_error, stat.mean_error);
        out += line;
    }
    char tail[200];
    std::snprintf(tail, sizeof(tail),
                  "\nmean error: source %.4f  adapted %.4f  gain %.2f pp\n", summary.source_mean_error,
                  summary.mean_error, summary.gain_pp);
    out += tail;
    if (!summary.round_means.empty()) {
        out += "per-round means:";
        for (std::size_t r = 0; r < summary.round_means.size(); ++r) {
            out += concat(" round", r + 1, "=", fmt_double(summary.round_means[r]));
        }
        out += "\n";
    }
    out += concat("detector: ", summary.detector.detected_within_2, "/", summary.detector.boundaries,
                  " boundaries within 2 batches, ", summary.detector.false_triggers,
                  " false triggers over ", summary.detector.batches, " batches\n");
    return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary);
    check<IoError>(out.good(), "cannot open '", path.string(), "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    out.close();
    check<IoError>(out.good(), "failed writing '", path.string(), "'");
}

void save_prompts(const std::filesystem::path& path, const PromptPair& pair) {
    Checkpoint ckpt;
    ckpt.add_meta("kind", "prompts");
    ckpt.add_meta("placement",
                  pair.policy == PlacementPolicy::kFixedAnchor ? "fixed" : "random-per-batch");
    ckpt.add_meta("fixed_anchor", concat(pair.fixed_row, " ", pair.fixed_col));
    ckpt.add_meta("relative_offset", std::to_string(pair.relative_offset));
    ckpt.add_tensor("prompt.dsp", pair.dsp.values);
    ckpt.add_tensor("prompt.dap", pair.dap.values);
    write_checkpoint_file(path, ckpt);
}

PromptPair load_prompts(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint_file(path);
    check<IoError>(ckpt.has_meta("kind") && ckpt.meta_value("kind") == "prompts", path.string(),
                   ": not a prompts checkpoint");
    PromptPair pair;
    pair.dsp = {ckpt.tensor("prompt.dsp"), PromptRole::kDsp};
    pair.dap = {ckpt.tensor("prompt.dap"), PromptRole::kDap};
    pair.policy = ckpt.meta_value("placement") == "fixed" ? PlacementPolicy::kFixedAnchor
                                                          : PlacementPolicy::kRandomPerBatch;
    {
        std::istringstream is(ckpt.meta_value("fixed_anchor"));
        is >> pair.fixed_row >> pair.fixed_col;
    }
    pair.relative_offset = std::stoi(ckpt.meta_value("relative_offset"));
    return pair;
}

void cmd_gen_data(const RunConfig& cfg) {
    const GlyphDataset all = generate_glyphs(cfg.data.train_size + cfg.data.test_size, cfg.data.classes,
                                             cfg.seed, cfg.data.geometry());
    const GlyphDataset train = all.subset(0, cfg.data.train_size);
    const GlyphDataset test = all.subset(cfg.data.train_size, cfg.data.test_size);
    save_dataset(cfg.data.path, train, test);
    std::cout << "wrote " << cfg.data.path << " (" << train.size() << " train / " << test.size()
              << " test, " << cfg.data.classes << " classes, seed " << cfg.seed << ")\n";
}

void cmd_train_source(const RunConfig& cfg, bool force) {
    check<MissingArtifactError>(std::filesystem::exists(cfg.data.path), "dataset '", cfg.data.path,
                                "' not found; run gen-data first");
    if (std::filesystem::exists(cfg.checkpoint) && !force) {
        throw MissingArtifactError(
            concat("checkpoint '", cfg.checkpoint, "' already exists; pass --force to retrain"));
    }
    const auto [train, test] = load_dataset(cfg.data.path);
    Classifier model = Classifier::build_default(train.classes, train.geometry(), cfg.seed);
    TrainConfig train_cfg = cfg.train;
    train_cfg.seed = cfg.seed;
    const std::vector<double> losses = model.train_source(train.images, train.labels, train_cfg);
    model.freeze();
    model.save(cfg.checkpoint);
    const double train_err = dataset_error(model, train.images, train.labels);
    const double test_err = dataset_error(model, test.images, test.labels);
    std::cout << "trained " << cfg.train.epochs << " epochs, loss " << fmt_double(losses.front())
              << " -> " << fmt_double(losses.back()) << "\n";
    std::cout << "clean accuracy: train " << fmt_double(1.0 - train_err) << ", test "
              << fmt_double(1.0 - test_err) << "\n";
    std::cout << "wrote " << cfg.checkpoint << "\n";
}

void cmd_adapt(const RunConfig& cfg) {
    check<MissingArtifactError>(std::filesystem::exists(cfg.data.path), "dataset '", cfg.data.path,
                                "' not found; run gen-data first");
    check<MissingArtifactError>(std::filesystem::exists(cfg.checkpoint), "checkpoint '", cfg.checkpoint,
                                "' not found; run train-source first");
    const auto [train, test] = load_dataset(cfg.data.path);
    const Classifier model = Classifier::load(cfg.checkpoint);
    check<ConfigError>(model.frozen(), "checkpoint '", cfg.checkpoint, "' is not frozen");
    const AdaptRunResult result = run_adaptation(cfg, model, train, test);
    write_run_outputs(cfg, result);
    std::cout << report_text(result.summary);
    std::cout << "outputs in " << cfg.out_dir << "\n";
}

void cmd_sweep(const RunConfig& cfg) {
    check<ConfigError>(!cfg.sweep.axis.empty(), "sweep: config has no sweep.axis");
    check<MissingArtifactError>(std::filesystem::exists(cfg.data.path), "dataset '", cfg.data.path,
                                "' not found; run gen-data first");
    check<MissingArtifactError>(std::filesystem::exists(cfg.checkpoint), "checkpoint '", cfg.checkpoint,
                                "' not found; run train-source first");
    const auto [train, test] = load_dataset(cfg.data.path);
    const Classifier model = Classifier::load(cfg.checkpoint);

    std::string csv = concat(cfg.sweep.axis, ",mean_error,source_mean_error,gain_pp\n");
    for (const std::string& value : cfg.sweep.values) {
        RunConfig point = cfg;
        point.sweep = {};
        if (cfg.sweep.axis == "prompt_size") {
            point.adapt.prompt_size = std::stoi(value);
        } else if (cfg.sweep.axis == "relative_offset") {
            point.adapt.relative_offset = std::stoi(value);
        } else if (cfg.sweep.axis == "alpha") {
            point.adapt.alpha = std::stod(value);
        } else if (cfg.sweep.axis == "placement") {
            if (value == "random") {
                point.adapt.placement = PlacementPolicy::kRandomPerBatch;
            } else if (value.rfind("fixed:", 0) == 0) {
                point.adapt.placement = PlacementPolicy::kFixedAnchor;
                const std::string anchor = value.substr(6);
                const std::size_t comma = anchor.find(',');
                check<ConfigError>(comma != std::string::npos, "sweep: bad placement value '", value,
                                   "' (want fixed:ROW,COL)");
                point.adapt.fixed_row = std::stoi(anchor.substr(0, comma));
                point.adapt.fixed_col = std::stoi(anchor.substr(comma + 1));
            } else {
                throw ConfigError(concat("sweep: bad placement value '", value, "'"));
            }
        }
        point.validate();
        point.out_dir = concat(cfg.out_dir, "/", cfg.sweep.axis, "_", value);
        for (char& c : point.out_dir) {
            if (c == ',' || c == ':') {
                c = '_';
            }
        }
        const AdaptRunResult result = run_adaptation(point, model, train, test);
        write_run_outputs(point, result);
        csv += concat(value, ",", fmt_double(result.summary.mean_error), ",",
                      fmt_double(result.summary.source_mean_error), ",",
                      fmt_double(result.summary.gain_pp), "\n");
        std::cout << cfg.sweep.axis << "=" << value << ": mean error "
                  << fmt_double(result.summary.mean_error) << "\n";
    }
    std::filesystem::create_directories(cfg.out_dir);
    write_text_file(std::filesystem::path(cfg.out_dir) / "sweep.csv", csv);
    std::cout << "wrote " << cfg.out_dir << "/sweep.csv\n";
}

void cmd_report(const std::vector<std::string>& run_dirs, const std::filesystem::path& out_dir) {
    check<ConfigError>(!run_dirs.empty(), "report: need at least one run directory");
    std::string csv = "run,schedule,seed,mean_error,source_mean_error,gain_pp\n";
    std::string text = "run                              schedule  seed    source_err  adapted_err  gain_pp\n";
    for (const std::string& dir : run_dirs) {
        const std::filesystem::path summary_path = std::filesystem::path(dir) / "summary.json";
        check<MissingArtifactError>(std::filesystem::exists(summary_path), "report: '",
                                    summary_path.string(), "' not found");
        json doc;
        try {
            std::ifstream in(summary_path);
            in >> doc;
        } catch (const json::exception& e) {
            throw IoError(concat("report: malformed '", summary_path.string(), "': ", e.what()));
        }
        const double mean = doc.at("mean_error").get<double>();
        const double source = doc.at("source_mean_error").get<double>();
        const double gain = doc.at("gain_pp").get<double>();
        csv += concat(dir, ",", doc.at("schedule").get<std::string>(), ",",
                      doc.at("seed").get<std::uint64_t>(), ",", fmt_double(mean), ",",
                      fmt_double(source), ",", fmt_double(gain), "\n");
        char line[256];
        std::snprintf(line, sizeof(line), "%-32s %-9s %-7llu %-11.4f %-12.4f %+.2f\n", dir.c_str(),
                      doc.at("schedule").get<std::string>().c_str(),
                      static_cast<unsigned long long>(doc.at("seed").get<std::uint64_t>()), source, mean,
                      gain);
        text += line;
    }
    std::filesystem::create_directories(out_dir);
    write_text_file(out_dir / "report.csv", csv);
    write_text_file(out_dir / "report.txt", text);
    std::cout << text;
    std::cout << "wrote " << (out_dir / "report.csv").string() << "\n";
}

}  // namespace padapt
