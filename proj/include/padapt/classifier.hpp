#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "padapt/tape.hpp"
#include "padapt/tensor.hpp"

namespace padapt {

struct InputGeometry {
    int channels = 3;
    int height = 32;
    int width = 32;

    bool operator==(const InputGeometry&) const = default;
};

struct TrainConfig {
    int epochs = 10;
    double lr = 0.05;
    double momentum = 0.9;
    int batch_size = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

enum class LayerKind { kConv, kRelu, kAvgPool2, kFlatten, kAffine, kSoftmax };

struct LayerSpec {
    LayerKind kind;
    int units = 0;  // conv: output channels (3x3 kernel), affine: output dim
    ConvPad pad = ConvPad::kSame;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

struct Prediction {
    Tensor probs;                     // [batch, classes]
    std::vector<double> confidence;   // per-sample max probability
    std::vector<int> predicted;       // per-sample argmax (first max wins)
};

// Source model q(y|x). Built and trained once on clean data, then frozen;
// adaptation only ever reads it.
class Classifier {
  public:
    // conv3x3(in->8, same) relu, conv3x3(8->16, same) relu, avgpool2,
    // flatten, affine(64) relu, affine(classes), softmax.
    static Classifier build_default(int classes, InputGeometry geom, std::uint64_t seed);

    int classes() const { return classes_; }
    const InputGeometry& geometry() const { return geometry_; }
    bool frozen() const { return frozen_; }
    void freeze() { frozen_ = true; }

    const std::vector<LayerSpec>& layers() const { return layers_; }
    const std::vector<NamedTensor>& parameters() const { return params_; }
    std::int64_t parameter_count() const;
    std::uint64_t weight_checksum() const;

    struct ForwardNodes {
        NodeId logits = -1;
        std::vector<NodeId> params;  // one id per parameter tensor, in order
    };
    // Records the model onto the tape. Parameter leaves are armed only when
    // the model is unfrozen and arm_params is set.
    ForwardNodes forward_logits(Tape& tape, NodeId images, bool arm_params = false) const;

    Prediction predict(const Tensor& images) const;

    // Minibatch SGD with momentum on one-hot cross-entropy. Returns the mean
    // training loss per epoch. Rejects frozen models, empty or mislabeled data.
    std::vector<double> train_source(const Tensor& images, const std::vector<int>& labels,
                                     const TrainConfig& cfg);

    void save(const std::filesystem::path& path) const;
    static Classifier load(const std::filesystem::path& path);

    void check_geometry(const Tensor& images) const;

  private:
    int classes_ = 0;
    InputGeometry geometry_;
    bool frozen_ = false;
    std::vector<LayerSpec> layers_;
    std::vector<NamedTensor> params_;
};

Tensor one_hot(const std::vector<int>& labels, int classes);

}  // namespace padapt
