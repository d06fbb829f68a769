#include "padapt/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "padapt/checkpoint.hpp"
#include "padapt/rng.hpp"

namespace padapt {

namespace {

Tensor he_normal(Shape shape, std::int64_t fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (double& v : t.values()) {
        v = rng.normal(0.0, stddev);
    }
    return t;
}

std::string layer_token(const LayerSpec& layer) {
    switch (layer.kind) {
        case LayerKind::kConv:
            return concat("conv3x3:", layer.units, ":", layer.pad == ConvPad::kSame ? "same" : "valid");
        case LayerKind::kRelu:
            return "relu";
        case LayerKind::kAvgPool2:
            return "avgpool2";
        case LayerKind::kFlatten:
            return "flatten";
        case LayerKind::kAffine:
            return concat("affine:", layer.units);
        case LayerKind::kSoftmax:
            return "softmax";
    }
    return "?";
}

LayerSpec parse_layer_token(const std::string& token) {
    LayerSpec layer{LayerKind::kRelu, 0, ConvPad::kSame};
    if (token == "relu") {
        layer.kind = LayerKind::kRelu;
    } else if (token == "avgpool2") {
        layer.kind = LayerKind::kAvgPool2;
    } else if (token == "flatten") {
        layer.kind = LayerKind::kFlatten;
    } else if (token == "softmax") {
        layer.kind = LayerKind::kSoftmax;
    } else if (token.rfind("conv3x3:", 0) == 0) {
        layer.kind = LayerKind::kConv;
        const std::size_t second = token.find(':', 8);
        check<IoError>(second != std::string::npos, "bad conv layer token '", token, "'");
        layer.units = std::stoi(token.substr(8, second - 8));
        const std::string pad = token.substr(second + 1);
        check<IoError>(pad == "same" || pad == "valid", "bad conv padding in '", token, "'");
        layer.pad = pad == "same" ? ConvPad::kSame : ConvPad::kValid;
    } else if (token.rfind("affine:", 0) == 0) {
        layer.kind = LayerKind::kAffine;
        layer.units = std::stoi(token.substr(7));
    } else {
        throw IoError(concat("unknown layer token '", token, "'"));
    }
    return layer;
}

}  // namespace

void TrainConfig::validate() const {
    check<ConfigError>(epochs >= 1, "train: epochs must be >= 1, got ", epochs);
    check<ConfigError>(lr >= 0.0, "train: lr must be >= 0, got ", lr);
    check<ConfigError>(momentum >= 0.0 && momentum < 1.0, "train: momentum must be in [0,1), got ", momentum);
    check<ConfigError>(batch_size >= 1, "train: batch size must be >= 1, got ", batch_size);
}

Tensor one_hot(const std::vector<int>& labels, int classes) {
    Tensor out({static_cast<int>(labels.size()), classes});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        check<std::out_of_range>(labels[i] >= 0 && labels[i] < classes, "label ", labels[i],
                                 " outside [0,", classes, ")");
        out[static_cast<std::int64_t>(i) * classes + labels[i]] = 1.0;
    }
    return out;
}

Classifier Classifier::build_default(int classes, InputGeometry geom, std::uint64_t seed) {
    check<ConfigError>(classes >= 2, "classifier: need at least 2 classes, got ", classes);
    check<ConfigError>(geom.channels >= 1 && geom.height >= 4 && geom.width >= 4,
                       "classifier: unsupported input geometry ", geom.channels, "x", geom.height, "x",
                       geom.width);
    check<ConfigError>(geom.height % 2 == 0 && geom.width % 2 == 0,
                       "classifier: input height/width must be even for avgpool2");

    Classifier model;
    model.classes_ = classes;
    model.geometry_ = geom;
    model.layers_ = {
        {LayerKind::kConv, 8, ConvPad::kSame},  {LayerKind::kRelu},
        {LayerKind::kConv, 16, ConvPad::kSame}, {LayerKind::kRelu},
        {LayerKind::kAvgPool2},                 {LayerKind::kFlatten},
        {LayerKind::kAffine, 64},               {LayerKind::kRelu},
        {LayerKind::kAffine, classes},          {LayerKind::kSoftmax},
    };

    Rng rng(Rng::derive(seed, "classifier-init"));
    int chans = geom.channels;
    int height = geom.height;
    int width = geom.width;
    int flat = 0;
    int conv_index = 0;
    int affine_index = 0;
    for (const LayerSpec& layer : model.layers_) {
        switch (layer.kind) {
            case LayerKind::kConv: {
                ++conv_index;
                const std::string base = concat("conv", conv_index);
                const std::int64_t fan_in = static_cast<std::int64_t>(chans) * 9;
                model.params_.push_back({base + ".weight", he_normal({layer.units, chans, 3, 3}, fan_in, rng)});
                model.params_.push_back({base + ".bias", Tensor({layer.units})});
                chans = layer.units;
                if (layer.pad == ConvPad::kValid) {
                    height -= 2;
                    width -= 2;
                }
                break;
            }
            case LayerKind::kAvgPool2:
                height /= 2;
                width /= 2;
                break;
            case LayerKind::kFlatten:
                flat = chans * height * width;
                break;
            case LayerKind::kAffine: {
                ++affine_index;
                const std::string base = concat("fc", affine_index);
                model.params_.push_back({base + ".weight", he_normal({layer.units, flat}, flat, rng)});
                model.params_.push_back({base + ".bias", Tensor({layer.units})});
                flat = layer.units;
                break;
            }
            case LayerKind::kRelu:
            case LayerKind::kSoftmax:
                break;
        }
    }
    return model;
}

std::int64_t Classifier::parameter_count() const {
    std::int64_t n = 0;
    for (const NamedTensor& p : params_) {
        n += p.value.size();
    }
    return n;
}

std::uint64_t Classifier::weight_checksum() const {
    std::string bytes;
    for (const NamedTensor& p : params_) {
        bytes += p.name;
        bytes += ':';
        const char* raw = reinterpret_cast<const char*>(p.value.data());
        bytes.append(raw, static_cast<std::size_t>(p.value.size()) * sizeof(double));
    }
    return fnv1a64(bytes);
}

void Classifier::check_geometry(const Tensor& images) const {
    check<ShapeError>(images.rank() == 4, "classifier: images must be rank 4, got ",
                      shape_str(images.shape()));
    check<ShapeError>(images.extent(1) == geometry_.channels && images.extent(2) == geometry_.height &&
                          images.extent(3) == geometry_.width,
                      "classifier: image geometry ", shape_str(images.shape()), " does not match model ",
                      geometry_.channels, "x", geometry_.height, "x", geometry_.width);
}

Classifier::ForwardNodes Classifier::forward_logits(Tape& tape, NodeId images, bool arm_params) const {
    check_geometry(tape.value(images));
    const bool arm = arm_params && !frozen_;
    ForwardNodes out;
    out.params.reserve(params_.size());
    std::size_t next_param = 0;
    const auto param_node = [&]() {
        const NodeId id = tape.leaf(params_[next_param].value, arm);
        ++next_param;
        out.params.push_back(id);
        return id;
    };

    NodeId x = images;
    for (const LayerSpec& layer : layers_) {
        switch (layer.kind) {
            case LayerKind::kConv: {
                const NodeId w = param_node();
                const NodeId b = param_node();
                x = tape.conv2d(x, w, b, layer.pad);
                break;
            }
            case LayerKind::kRelu:
                x = tape.relu(x);
                break;
            case LayerKind::kAvgPool2:
                x = tape.avgpool2(x);
                break;
            case LayerKind::kFlatten:
                x = tape.flatten(x);
                break;
            case LayerKind::kAffine: {
                const NodeId w = param_node();
                const NodeId b = param_node();
                x = tape.affine(x, w, b);
                break;
            }
            case LayerKind::kSoftmax:
                // terminal; logits are the input of the softmax
                out.logits = x;
                break;
        }
    }
    check<std::logic_error>(out.logits >= 0, "classifier: architecture lacks a softmax head");
    return out;
}

Prediction Classifier::predict(const Tensor& images) const {
    Tape tape;
    const NodeId in = tape.leaf(images, false);
    const ForwardNodes fwd = forward_logits(tape, in, false);
    const NodeId probs = tape.softmax(fwd.logits);

    Prediction out;
    out.probs = tape.value(probs);
    const int batch = out.probs.extent(0);
    const int classes = out.probs.extent(1);
    out.confidence.resize(static_cast<std::size_t>(batch));
    out.predicted.resize(static_cast<std::size_t>(batch));
    for (int b = 0; b < batch; ++b) {
        const double* row = out.probs.data() + static_cast<std::int64_t>(b) * classes;
        int best = 0;
        for (int c = 1; c < classes; ++c) {
            if (row[c] > row[best]) {
                best = c;
            }
        }
        out.confidence[static_cast<std::size_t>(b)] = row[best];
        out.predicted[static_cast<std::size_t>(b)] = best;
    }
    return out;
}

std::vector<double> Classifier::train_source(const Tensor& images, const std::vector<int>& labels,
                                             const TrainConfig& cfg) {
    cfg.validate();
    check<std::logic_error>(!frozen_, "train_source: model is frozen");
    check_geometry(images);
    const int total = images.extent(0);
    check<std::invalid_argument>(total > 0 && !labels.empty(), "train_source: empty dataset");
    check<std::invalid_argument>(static_cast<std::size_t>(total) == labels.size(),
                                 "train_source: ", total, " images vs ", labels.size(), " labels");
    for (const int label : labels) {
        check<std::out_of_range>(label >= 0 && label < classes_, "train_source: label ", label,
                                 " outside [0,", classes_, ")");
    }

    const int chw = geometry_.channels * geometry_.height * geometry_.width;
    std::vector<Tensor> velocity;
    velocity.reserve(params_.size());
    for (const NamedTensor& p : params_) {
        velocity.emplace_back(p.value.shape());
    }

    Rng shuffle_rng(Rng::derive(cfg.seed, "train-shuffle"));
    std::vector<int> order(static_cast<std::size_t>(total));
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> epoch_losses;
    epoch_losses.reserve(static_cast<std::size_t>(cfg.epochs));
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        // Fisher-Yates with the portable Rng; std::shuffle is not
        // reproducible across standard libraries.
        for (int i = total - 1; i > 0; --i) {
            const int j = shuffle_rng.uniform_int(0, i);
            std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
        }

        double loss_sum = 0.0;
        int batch_count = 0;
        for (int start = 0; start < total; start += cfg.batch_size) {
            const int count = std::min(cfg.batch_size, total - start);
            Tensor batch({count, geometry_.channels, geometry_.height, geometry_.width});
            std::vector<int> batch_labels(static_cast<std::size_t>(count));
            for (int i = 0; i < count; ++i) {
                const int src = order[static_cast<std::size_t>(start + i)];
                std::copy_n(images.data() + static_cast<std::int64_t>(src) * chw, chw,
                            batch.data() + static_cast<std::int64_t>(i) * chw);
                batch_labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(src)];
            }

            Tape tape;
            const NodeId in = tape.leaf(batch, false);
            const ForwardNodes fwd = forward_logits(tape, in, true);
            const NodeId log_probs = tape.log_softmax(fwd.logits);
            const NodeId targets = tape.leaf(one_hot(batch_labels, classes_), false);
            const NodeId loss = tape.soft_cross_entropy(targets, log_probs);
            loss_sum += tape.value(loss)[0];
            ++batch_count;

            const GradientMap grads = tape.backward(loss);
            for (std::size_t p = 0; p < params_.size(); ++p) {
                const Tensor& g = grads.at(fwd.params[p]);
                Tensor& v = velocity[p];
                Tensor& theta = params_[p].value;
                for (std::int64_t i = 0; i < theta.size(); ++i) {
                    v[i] = cfg.momentum * v[i] + g[i];
                    theta[i] -= cfg.lr * v[i];
                }
            }
        }
        epoch_losses.push_back(loss_sum / batch_count);
    }
    return epoch_losses;
}

void Classifier::save(const std::filesystem::path& path) const {
    Checkpoint ckpt;
    ckpt.add_meta("kind", "classifier");
    ckpt.add_meta("classes", std::to_string(classes_));
    ckpt.add_meta("input", concat(geometry_.channels, " ", geometry_.height, " ", geometry_.width));
    ckpt.add_meta("frozen", frozen_ ? "1" : "0");
    std::string arch;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        if (i > 0) {
            arch += ',';
        }
        arch += layer_token(layers_[i]);
    }
    ckpt.add_meta("arch", arch);
    for (const NamedTensor& p : params_) {
        ckpt.add_tensor(p.name, p.value);
    }
    write_checkpoint_file(path, ckpt);
}

Classifier Classifier::load(const std::filesystem::path& path) {
    const Checkpoint ckpt = read_checkpoint_file(path);
    check<IoError>(ckpt.has_meta("kind") && ckpt.meta_value("kind") == "classifier", path.string(),
                   ": not a classifier checkpoint");
    Classifier model;
    model.classes_ = std::stoi(ckpt.meta_value("classes"));
    {
        std::istringstream is(ckpt.meta_value("input"));
        check<IoError>(static_cast<bool>(is >> model.geometry_.channels >> model.geometry_.height >>
                                         model.geometry_.width),
                       path.string(), ": malformed input geometry");
    }
    model.frozen_ = ckpt.meta_value("frozen") == "1";
    {
        std::istringstream is(ckpt.meta_value("arch"));
        std::string token;
        while (std::getline(is, token, ',')) {
            model.layers_.push_back(parse_layer_token(token));
        }
    }
    for (const auto& [name, tensor] : ckpt.tensors) {
        model.params_.push_back({name, tensor});
    }

    // Cross-check the parameter tensors against the architecture by running a
    // single dummy forward; geometry mismatches surface as shape errors here
    // rather than at first prediction.
    try {
        Tape tape;
        const NodeId in = tape.leaf(
            Tensor({1, model.geometry_.channels, model.geometry_.height, model.geometry_.width}), false);
        (void)model.forward_logits(tape, in, false);
    } catch (const ShapeError& e) {
        throw IoError(concat(path.string(), ": checkpoint inconsistent with architecture: ", e.what()));
    }
    return model;
}

}  // namespace padapt
