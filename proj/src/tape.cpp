#include "padapt/tape.hpp"

#include <algorithm>
#include <cmath>

namespace padapt {

namespace {

constexpr double kTeacherRowTolerance = 1e-9;

struct ConvGeometry {
    int batch, in_c, in_h, in_w;
    int out_c, k_h, k_w;
    int pad_h, pad_w;
    int out_h, out_w;
};

ConvGeometry conv_geometry(const Tensor& x, const Tensor& w, const Tensor& bias, ConvPad pad) {
    check<ShapeError>(x.rank() == 4, "conv2d: input must be rank 4, got ", shape_str(x.shape()));
    check<ShapeError>(w.rank() == 4, "conv2d: weight must be rank 4, got ", shape_str(w.shape()));
    check<ShapeError>(bias.rank() == 1, "conv2d: bias must be rank 1, got ", shape_str(bias.shape()));
    ConvGeometry g{};
    g.batch = x.extent(0);
    g.in_c = x.extent(1);
    g.in_h = x.extent(2);
    g.in_w = x.extent(3);
    g.out_c = w.extent(0);
    g.k_h = w.extent(2);
    g.k_w = w.extent(3);
    check<ShapeError>(w.extent(1) == g.in_c, "conv2d: weight ", shape_str(w.shape()),
                      " incompatible with input ", shape_str(x.shape()));
    check<ShapeError>(bias.extent(0) == g.out_c, "conv2d: bias ", shape_str(bias.shape()),
                      " incompatible with weight ", shape_str(w.shape()));
    if (pad == ConvPad::kSame) {
        check<ShapeError>(g.k_h % 2 == 1 && g.k_w % 2 == 1,
                          "conv2d(same): kernel extents must be odd, got ", shape_str(w.shape()));
        g.pad_h = g.k_h / 2;
        g.pad_w = g.k_w / 2;
        g.out_h = g.in_h;
        g.out_w = g.in_w;
    } else {
        g.pad_h = 0;
        g.pad_w = 0;
        g.out_h = g.in_h - g.k_h + 1;
        g.out_w = g.in_w - g.k_w + 1;
        check<ShapeError>(g.out_h >= 1 && g.out_w >= 1, "conv2d(valid): kernel ", shape_str(w.shape()),
                          " larger than input ", shape_str(x.shape()));
    }
    return g;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor& bias, const ConvGeometry& g) {
    Tensor y({g.batch, g.out_c, g.out_h, g.out_w});
    const double* xd = x.data();
    const double* wd = w.data();
    const double* bd = bias.data();
    double* yd = y.data();
    const std::int64_t x_plane = static_cast<std::int64_t>(g.in_h) * g.in_w;
    const std::int64_t y_plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
    for (int b = 0; b < g.batch; ++b) {
        for (int oc = 0; oc < g.out_c; ++oc) {
            double* out_plane = yd + (static_cast<std::int64_t>(b) * g.out_c + oc) * y_plane;
            std::fill(out_plane, out_plane + y_plane, bd[oc]);
            for (int ic = 0; ic < g.in_c; ++ic) {
                const double* in_plane = xd + (static_cast<std::int64_t>(b) * g.in_c + ic) * x_plane;
                for (int kh = 0; kh < g.k_h; ++kh) {
                    for (int kw = 0; kw < g.k_w; ++kw) {
                        const double wv = wd[((static_cast<std::int64_t>(oc) * g.in_c + ic) * g.k_h + kh) * g.k_w + kw];
                        const int ow_lo = std::max(0, g.pad_w - kw);
                        const int ow_hi = std::min(g.out_w - 1, g.in_w - 1 - kw + g.pad_w);
                        for (int oh = 0; oh < g.out_h; ++oh) {
                            const int ih = oh + kh - g.pad_h;
                            if (ih < 0 || ih >= g.in_h) {
                                continue;
                            }
                            const double* xrow = in_plane + static_cast<std::int64_t>(ih) * g.in_w + (kw - g.pad_w);
                            double* yrow = out_plane + static_cast<std::int64_t>(oh) * g.out_w;
                            for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                yrow[ow] += wv * xrow[ow];
                            }
                        }
                    }
                }
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvGeometry& g, const Tensor& gy,
                     Tensor* gx, Tensor* gw, Tensor* gbias) {
    const double* xd = x.data();
    const double* wd = w.data();
    const double* gyd = gy.data();
    const std::int64_t x_plane = static_cast<std::int64_t>(g.in_h) * g.in_w;
    const std::int64_t y_plane = static_cast<std::int64_t>(g.out_h) * g.out_w;
    if (gbias != nullptr) {
        double* gbd = gbias->data();
        for (int b = 0; b < g.batch; ++b) {
            for (int oc = 0; oc < g.out_c; ++oc) {
                const double* grow = gyd + (static_cast<std::int64_t>(b) * g.out_c + oc) * y_plane;
                double acc = 0.0;
                for (std::int64_t i = 0; i < y_plane; ++i) {
                    acc += grow[i];
                }
                gbd[oc] += acc;
            }
        }
    }
    for (int b = 0; b < g.batch; ++b) {
        for (int oc = 0; oc < g.out_c; ++oc) {
            const double* g_plane = gyd + (static_cast<std::int64_t>(b) * g.out_c + oc) * y_plane;
            for (int ic = 0; ic < g.in_c; ++ic) {
                const double* in_plane = xd + (static_cast<std::int64_t>(b) * g.in_c + ic) * x_plane;
                double* gx_plane = gx != nullptr
                                       ? gx->data() + (static_cast<std::int64_t>(b) * g.in_c + ic) * x_plane
                                       : nullptr;
                for (int kh = 0; kh < g.k_h; ++kh) {
                    for (int kw = 0; kw < g.k_w; ++kw) {
                        const std::int64_t widx =
                            ((static_cast<std::int64_t>(oc) * g.in_c + ic) * g.k_h + kh) * g.k_w + kw;
                        const double wv = wd[widx];
                        const int ow_lo = std::max(0, g.pad_w - kw);
                        const int ow_hi = std::min(g.out_w - 1, g.in_w - 1 - kw + g.pad_w);
                        double wacc = 0.0;
                        for (int oh = 0; oh < g.out_h; ++oh) {
                            const int ih = oh + kh - g.pad_h;
                            if (ih < 0 || ih >= g.in_h) {
                                continue;
                            }
                            const double* grow = g_plane + static_cast<std::int64_t>(oh) * g.out_w;
                            const std::int64_t row_off = static_cast<std::int64_t>(ih) * g.in_w + (kw - g.pad_w);
                            if (gx_plane != nullptr) {
                                double* gxrow = gx_plane + row_off;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    gxrow[ow] += wv * grow[ow];
                                }
                            }
                            if (gw != nullptr) {
                                const double* xrow = in_plane + row_off;
                                for (int ow = ow_lo; ow <= ow_hi; ++ow) {
                                    wacc += grow[ow] * xrow[ow];
                                }
                            }
                        }
                        if (gw != nullptr) {
                            gw->data()[widx] += wacc;
                        }
                    }
                }
            }
        }
    }
}

}  // namespace

const char* op_name(OpKind kind) {
    switch (kind) {
        case OpKind::kLeaf: return "leaf";
        case OpKind::kAdd: return "add";
        case OpKind::kMul: return "elementwise-mul";
        case OpKind::kConv2d: return "conv2d";
        case OpKind::kRelu: return "relu";
        case OpKind::kAffine: return "affine";
        case OpKind::kAvgPool2: return "avgpool2";
        case OpKind::kFlatten: return "flatten";
        case OpKind::kSoftmax: return "softmax";
        case OpKind::kLog: return "log";
        case OpKind::kLogSoftmax: return "log-softmax";
        case OpKind::kSoftCrossEntropy: return "soft-cross-entropy";
        case OpKind::kAddPatch: return "add-patch";
        case OpKind::kSum: return "sum";
    }
    return "unknown";
}

const Tensor& GradientMap::at(NodeId id) const {
    const auto it = grads_.find(id);
    check<std::out_of_range>(it != grads_.end(), "gradient map: no gradient for node ", id);
    return it->second;
}

NodeId Tape::leaf(Tensor value, bool requires_grad) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

NodeId Tape::conv2d(NodeId x, NodeId w, NodeId bias, ConvPad pad) {
    OpAttrs attrs;
    attrs.pad = pad;
    return apply(OpKind::kConv2d, {x, w, bias}, attrs);
}

NodeId Tape::add_patch(NodeId images, NodeId patch, int row, int col) {
    OpAttrs attrs;
    attrs.row = row;
    attrs.col = col;
    return apply(OpKind::kAddPatch, {images, patch}, attrs);
}

const Tape::Node& Tape::node(NodeId id) const {
    check<std::out_of_range>(id >= 0 && static_cast<std::size_t>(id) < nodes_.size(),
                             "tape: invalid node id ", id);
    return nodes_[static_cast<std::size_t>(id)];
}

const Tensor& Tape::value(NodeId id) const { return node(id).value; }

bool Tape::requires_grad(NodeId id) const { return node(id).requires_grad; }

NodeId Tape::apply(OpKind kind, const std::vector<NodeId>& inputs, const OpAttrs& attrs) {
    check<std::invalid_argument>(kind != OpKind::kLeaf, "tape: use leaf() to create leaves");
    const auto arity = [&](std::size_t want) {
        check<std::invalid_argument>(inputs.size() == want, op_name(kind), ": expected ", want,
                                     " inputs, got ", inputs.size());
    };
    for (const NodeId id : inputs) {
        node(id);  // validates
    }
    Node n;
    n.kind = kind;
    n.inputs = inputs;
    n.attrs = attrs;
    for (const NodeId id : inputs) {
        n.needs_grad = n.needs_grad || node(id).needs_grad;
    }

    switch (kind) {
        case OpKind::kAdd:
        case OpKind::kMul: {
            arity(2);
            const Tensor& a = value(inputs[0]);
            const Tensor& b = value(inputs[1]);
            check<ShapeError>(a.same_shape(b), op_name(kind), ": shape ", shape_str(a.shape()),
                              " vs ", shape_str(b.shape()));
            Tensor out = a;
            double* od = out.data();
            const double* bd = b.data();
            const std::int64_t count = out.size();
            if (kind == OpKind::kAdd) {
                for (std::int64_t i = 0; i < count; ++i) {
                    od[i] += bd[i];
                }
            } else {
                for (std::int64_t i = 0; i < count; ++i) {
                    od[i] *= bd[i];
                }
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kConv2d: {
            arity(3);
            const Tensor& x = value(inputs[0]);
            const Tensor& w = value(inputs[1]);
            const Tensor& bias = value(inputs[2]);
            const ConvGeometry g = conv_geometry(x, w, bias, attrs.pad);
            n.value = conv2d_forward(x, w, bias, g);
            break;
        }
        case OpKind::kRelu: {
            arity(1);
            Tensor out = value(inputs[0]);
            for (double& v : out.values()) {
                v = v > 0.0 ? v : 0.0;
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kAffine: {
            arity(3);
            const Tensor& x = value(inputs[0]);
            const Tensor& w = value(inputs[1]);
            const Tensor& bias = value(inputs[2]);
            check<ShapeError>(x.rank() == 2, "affine: input must be rank 2, got ", shape_str(x.shape()));
            check<ShapeError>(w.rank() == 2, "affine: weight must be rank 2, got ", shape_str(w.shape()));
            check<ShapeError>(bias.rank() == 1, "affine: bias must be rank 1, got ", shape_str(bias.shape()));
            const int batch = x.extent(0);
            const int in_dim = x.extent(1);
            const int out_dim = w.extent(0);
            check<ShapeError>(w.extent(1) == in_dim, "affine: weight ", shape_str(w.shape()),
                              " incompatible with input ", shape_str(x.shape()));
            check<ShapeError>(bias.extent(0) == out_dim, "affine: bias ", shape_str(bias.shape()),
                              " incompatible with weight ", shape_str(w.shape()));
            Tensor out({batch, out_dim});
            const double* xd = x.data();
            const double* wd = w.data();
            const double* bd = bias.data();
            double* od = out.data();
            for (int b = 0; b < batch; ++b) {
                const double* xrow = xd + static_cast<std::int64_t>(b) * in_dim;
                for (int o = 0; o < out_dim; ++o) {
                    const double* wrow = wd + static_cast<std::int64_t>(o) * in_dim;
                    double acc = bd[o];
                    for (int i = 0; i < in_dim; ++i) {
                        acc += xrow[i] * wrow[i];
                    }
                    od[static_cast<std::int64_t>(b) * out_dim + o] = acc;
                }
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kAvgPool2: {
            arity(1);
            const Tensor& x = value(inputs[0]);
            check<ShapeError>(x.rank() == 4, "avgpool2: input must be rank 4, got ", shape_str(x.shape()));
            check<ShapeError>(x.extent(2) % 2 == 0 && x.extent(3) % 2 == 0,
                              "avgpool2: spatial extents must be even, got ", shape_str(x.shape()));
            const int batch = x.extent(0), chans = x.extent(1), in_h = x.extent(2), in_w = x.extent(3);
            const int out_h = in_h / 2, out_w = in_w / 2;
            Tensor out({batch, chans, out_h, out_w});
            for (int b = 0; b < batch; ++b) {
                for (int c = 0; c < chans; ++c) {
                    for (int oh = 0; oh < out_h; ++oh) {
                        for (int ow = 0; ow < out_w; ++ow) {
                            const double v = x.at4(b, c, 2 * oh, 2 * ow) + x.at4(b, c, 2 * oh, 2 * ow + 1) +
                                             x.at4(b, c, 2 * oh + 1, 2 * ow) + x.at4(b, c, 2 * oh + 1, 2 * ow + 1);
                            out.at4(b, c, oh, ow) = 0.25 * v;
                        }
                    }
                }
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kFlatten: {
            arity(1);
            const Tensor& x = value(inputs[0]);
            check<ShapeError>(x.rank() >= 2, "flatten: input must be rank >= 2, got ", shape_str(x.shape()));
            const int batch = x.extent(0);
            const int rest = static_cast<int>(x.size() / batch);
            n.value = Tensor({batch, rest}, x.values());
            break;
        }
        case OpKind::kSoftmax:
        case OpKind::kLogSoftmax: {
            arity(1);
            const Tensor& x = value(inputs[0]);
            check<ShapeError>(x.rank() == 2, op_name(kind), ": input must be rank 2, got ",
                              shape_str(x.shape()));
            const int batch = x.extent(0), classes = x.extent(1);
            Tensor out(x.shape());
            const double* xd = x.data();
            double* od = out.data();
            for (int b = 0; b < batch; ++b) {
                const double* row = xd + static_cast<std::int64_t>(b) * classes;
                double* orow = od + static_cast<std::int64_t>(b) * classes;
                double row_max = row[0];
                for (int c = 1; c < classes; ++c) {
                    row_max = std::max(row_max, row[c]);
                }
                double denom = 0.0;
                for (int c = 0; c < classes; ++c) {
                    orow[c] = std::exp(row[c] - row_max);
                    denom += orow[c];
                }
                if (kind == OpKind::kSoftmax) {
                    for (int c = 0; c < classes; ++c) {
                        orow[c] /= denom;
                    }
                } else {
                    const double log_denom = std::log(denom);
                    for (int c = 0; c < classes; ++c) {
                        orow[c] = row[c] - row_max - log_denom;
                    }
                }
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kLog: {
            arity(1);
            const Tensor& x = value(inputs[0]);
            Tensor out(x.shape());
            const double* xd = x.data();
            double* od = out.data();
            for (std::int64_t i = 0; i < x.size(); ++i) {
                check<NumericError>(xd[i] > 0.0, "log: input entries must be positive, got ", xd[i]);
                od[i] = std::log(xd[i]);
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kSoftCrossEntropy: {
            arity(2);
            const Tensor& teacher = value(inputs[0]);
            const Tensor& student = value(inputs[1]);
            check<ShapeError>(teacher.rank() == 2 && student.rank() == 2 && teacher.same_shape(student),
                              "soft-cross-entropy: shape ", shape_str(teacher.shape()), " vs ",
                              shape_str(student.shape()));
            const int batch = teacher.extent(0), classes = teacher.extent(1);
            double total = 0.0;
            for (int b = 0; b < batch; ++b) {
                const double* trow = teacher.data() + static_cast<std::int64_t>(b) * classes;
                const double* srow = student.data() + static_cast<std::int64_t>(b) * classes;
                double row_sum = 0.0;
                double dot = 0.0;
                for (int c = 0; c < classes; ++c) {
                    row_sum += trow[c];
                    dot += trow[c] * srow[c];
                }
                check<NumericError>(std::abs(row_sum - 1.0) <= kTeacherRowTolerance,
                                    "soft-cross-entropy: teacher row ", b, " sums to ", row_sum,
                                    ", expected 1 within ", kTeacherRowTolerance);
                total += dot;
            }
            n.value = Tensor::scalar(-total / batch);
            break;
        }
        case OpKind::kAddPatch: {
            arity(2);
            const Tensor& images = value(inputs[0]);
            const Tensor& patch = value(inputs[1]);
            check<ShapeError>(images.rank() == 4, "add-patch: images must be rank 4, got ",
                              shape_str(images.shape()));
            check<ShapeError>(patch.rank() == 3, "add-patch: patch must be rank 3, got ",
                              shape_str(patch.shape()));
            check<ShapeError>(patch.extent(0) == images.extent(1), "add-patch: patch ",
                              shape_str(patch.shape()), " channel mismatch with images ",
                              shape_str(images.shape()));
            const int p_h = patch.extent(1), p_w = patch.extent(2);
            check<ShapeError>(attrs.row >= 0 && attrs.col >= 0 && attrs.row + p_h <= images.extent(2) &&
                                  attrs.col + p_w <= images.extent(3),
                              "add-patch: anchor (", attrs.row, ",", attrs.col, ") with patch ",
                              shape_str(patch.shape()), " exceeds image ", shape_str(images.shape()));
            Tensor out = images;
            const int batch = images.extent(0), chans = images.extent(1);
            for (int b = 0; b < batch; ++b) {
                for (int c = 0; c < chans; ++c) {
                    for (int i = 0; i < p_h; ++i) {
                        for (int j = 0; j < p_w; ++j) {
                            out.at4(b, c, attrs.row + i, attrs.col + j) +=
                                patch[(static_cast<std::int64_t>(c) * p_h + i) * p_w + j];
                        }
                    }
                }
            }
            n.value = std::move(out);
            break;
        }
        case OpKind::kSum: {
            arity(1);
            const Tensor& x = value(inputs[0]);
            double total = 0.0;
            for (std::int64_t i = 0; i < x.size(); ++i) {
                total += x[i];
            }
            n.value = Tensor::scalar(total);
            break;
        }
        case OpKind::kLeaf:
            break;
    }

    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

GradientMap Tape::backward(NodeId loss) const {
    const Node& loss_node = node(loss);
    check<std::invalid_argument>(loss_node.value.size() == 1, "backward: loss must be scalar, got ",
                                 shape_str(loss_node.value.shape()));

    std::vector<Tensor> grads(nodes_.size());
    const auto grad_of = [&](NodeId id) -> Tensor& {
        Tensor& g = grads[static_cast<std::size_t>(id)];
        if (g.size() == 0) {
            g = Tensor(nodes_[static_cast<std::size_t>(id)].value.shape());
        }
        return g;
    };
    grad_of(loss)[0] = 1.0;

    for (NodeId id = loss; id >= 0; --id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.kind == OpKind::kLeaf || !n.needs_grad) {
            continue;
        }
        const Tensor& gy = grads[static_cast<std::size_t>(id)];
        if (gy.size() == 0) {
            continue;  // not on any path to the loss
        }
        const auto wants = [&](std::size_t input_pos) {
            return nodes_[static_cast<std::size_t>(n.inputs[input_pos])].needs_grad;
        };
        switch (n.kind) {
            case OpKind::kAdd: {
                for (std::size_t k = 0; k < 2; ++k) {
                    if (wants(k)) {
                        add_scaled_inplace(grad_of(n.inputs[k]), gy, 1.0);
                    }
                }
                break;
            }
            case OpKind::kMul: {
                const Tensor& a = value(n.inputs[0]);
                const Tensor& b = value(n.inputs[1]);
                if (wants(0)) {
                    Tensor& ga = grad_of(n.inputs[0]);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        ga[i] += gy[i] * b[i];
                    }
                }
                if (wants(1)) {
                    Tensor& gb = grad_of(n.inputs[1]);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        gb[i] += gy[i] * a[i];
                    }
                }
                break;
            }
            case OpKind::kConv2d: {
                const Tensor& x = value(n.inputs[0]);
                const Tensor& w = value(n.inputs[1]);
                const Tensor& bias = value(n.inputs[2]);
                const ConvGeometry g = conv_geometry(x, w, bias, n.attrs.pad);
                Tensor* gx = wants(0) ? &grad_of(n.inputs[0]) : nullptr;
                Tensor* gw = wants(1) ? &grad_of(n.inputs[1]) : nullptr;
                Tensor* gb = wants(2) ? &grad_of(n.inputs[2]) : nullptr;
                conv2d_backward(x, w, g, gy, gx, gw, gb);
                break;
            }
            case OpKind::kRelu: {
                if (wants(0)) {
                    const Tensor& x = value(n.inputs[0]);
                    Tensor& gx = grad_of(n.inputs[0]);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        gx[i] += x[i] > 0.0 ? gy[i] : 0.0;
                    }
                }
                break;
            }
            case OpKind::kAffine: {
                const Tensor& x = value(n.inputs[0]);
                const Tensor& w = value(n.inputs[1]);
                const int batch = x.extent(0);
                const int in_dim = x.extent(1);
                const int out_dim = w.extent(0);
                if (wants(0)) {
                    Tensor& gx = grad_of(n.inputs[0]);
                    for (int b = 0; b < batch; ++b) {
                        double* gxrow = gx.data() + static_cast<std::int64_t>(b) * in_dim;
                        const double* gyrow = gy.data() + static_cast<std::int64_t>(b) * out_dim;
                        for (int o = 0; o < out_dim; ++o) {
                            const double gv = gyrow[o];
                            const double* wrow = w.data() + static_cast<std::int64_t>(o) * in_dim;
                            for (int i = 0; i < in_dim; ++i) {
                                gxrow[i] += gv * wrow[i];
                            }
                        }
                    }
                }
                if (wants(1)) {
                    Tensor& gw = grad_of(n.inputs[1]);
                    for (int b = 0; b < batch; ++b) {
                        const double* xrow = x.data() + static_cast<std::int64_t>(b) * in_dim;
                        const double* gyrow = gy.data() + static_cast<std::int64_t>(b) * out_dim;
                        for (int o = 0; o < out_dim; ++o) {
                            const double gv = gyrow[o];
                            double* gwrow = gw.data() + static_cast<std::int64_t>(o) * in_dim;
                            for (int i = 0; i < in_dim; ++i) {
                                gwrow[i] += gv * xrow[i];
                            }
                        }
                    }
                }
                if (wants(2)) {
                    Tensor& gb = grad_of(n.inputs[2]);
                    for (int b = 0; b < batch; ++b) {
                        const double* gyrow = gy.data() + static_cast<std::int64_t>(b) * out_dim;
                        for (int o = 0; o < out_dim; ++o) {
                            gb[o] += gyrow[o];
                        }
                    }
                }
                break;
            }
            case OpKind::kAvgPool2: {
                if (wants(0)) {
                    const Tensor& x = value(n.inputs[0]);
                    Tensor& gx = grad_of(n.inputs[0]);
                    const int batch = x.extent(0), chans = x.extent(1);
                    const int out_h = x.extent(2) / 2, out_w = x.extent(3) / 2;
                    for (int b = 0; b < batch; ++b) {
                        for (int c = 0; c < chans; ++c) {
                            for (int oh = 0; oh < out_h; ++oh) {
                                for (int ow = 0; ow < out_w; ++ow) {
                                    const double q = 0.25 * gy.at4(b, c, oh, ow);
                                    gx.at4(b, c, 2 * oh, 2 * ow) += q;
                                    gx.at4(b, c, 2 * oh, 2 * ow + 1) += q;
                                    gx.at4(b, c, 2 * oh + 1, 2 * ow) += q;
                                    gx.at4(b, c, 2 * oh + 1, 2 * ow + 1) += q;
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::kFlatten: {
                if (wants(0)) {
                    Tensor& gx = grad_of(n.inputs[0]);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        gx[i] += gy[i];
                    }
                }
                break;
            }
            case OpKind::kSoftmax: {
                if (wants(0)) {
                    const Tensor& y = n.value;
                    Tensor& gx = grad_of(n.inputs[0]);
                    const int batch = y.extent(0), classes = y.extent(1);
                    for (int b = 0; b < batch; ++b) {
                        const double* yrow = y.data() + static_cast<std::int64_t>(b) * classes;
                        const double* gyrow = gy.data() + static_cast<std::int64_t>(b) * classes;
                        double* gxrow = gx.data() + static_cast<std::int64_t>(b) * classes;
                        double inner = 0.0;
                        for (int c = 0; c < classes; ++c) {
                            inner += gyrow[c] * yrow[c];
                        }
                        for (int c = 0; c < classes; ++c) {
                            gxrow[c] += yrow[c] * (gyrow[c] - inner);
                        }
                    }
                }
                break;
            }
            case OpKind::kLogSoftmax: {
                if (wants(0)) {
                    const Tensor& y = n.value;  // log-probs
                    Tensor& gx = grad_of(n.inputs[0]);
                    const int batch = y.extent(0), classes = y.extent(1);
                    for (int b = 0; b < batch; ++b) {
                        const double* yrow = y.data() + static_cast<std::int64_t>(b) * classes;
                        const double* gyrow = gy.data() + static_cast<std::int64_t>(b) * classes;
                        double* gxrow = gx.data() + static_cast<std::int64_t>(b) * classes;
                        double gsum = 0.0;
                        for (int c = 0; c < classes; ++c) {
                            gsum += gyrow[c];
                        }
                        for (int c = 0; c < classes; ++c) {
                            gxrow[c] += gyrow[c] - std::exp(yrow[c]) * gsum;
                        }
                    }
                }
                break;
            }
            case OpKind::kLog: {
                if (wants(0)) {
                    const Tensor& x = value(n.inputs[0]);
                    Tensor& gx = grad_of(n.inputs[0]);
                    for (std::int64_t i = 0; i < gy.size(); ++i) {
                        gx[i] += gy[i] / x[i];
                    }
                }
                break;
            }
            case OpKind::kSoftCrossEntropy: {
                const Tensor& teacher = value(n.inputs[0]);
                const Tensor& student = value(n.inputs[1]);
                const int batch = teacher.extent(0);
                const double coeff = -gy[0] / batch;
                if (wants(0)) {
                    Tensor& gt = grad_of(n.inputs[0]);
                    for (std::int64_t i = 0; i < teacher.size(); ++i) {
                        gt[i] += coeff * student[i];
                    }
                }
                if (wants(1)) {
                    Tensor& gs = grad_of(n.inputs[1]);
                    for (std::int64_t i = 0; i < student.size(); ++i) {
                        gs[i] += coeff * teacher[i];
                    }
                }
                break;
            }
            case OpKind::kAddPatch: {
                if (wants(0)) {
                    add_scaled_inplace(grad_of(n.inputs[0]), gy, 1.0);
                }
                if (wants(1)) {
                    const Tensor& patch = value(n.inputs[1]);
                    Tensor& gp = grad_of(n.inputs[1]);
                    const int batch = gy.extent(0), chans = gy.extent(1);
                    const int p_h = patch.extent(1), p_w = patch.extent(2);
                    for (int b = 0; b < batch; ++b) {
                        for (int c = 0; c < chans; ++c) {
                            for (int i = 0; i < p_h; ++i) {
                                for (int j = 0; j < p_w; ++j) {
                                    gp[(static_cast<std::int64_t>(c) * p_h + i) * p_w + j] +=
                                        gy.at4(b, c, n.attrs.row + i, n.attrs.col + j);
                                }
                            }
                        }
                    }
                }
                break;
            }
            case OpKind::kSum: {
                if (wants(0)) {
                    Tensor& gx = grad_of(n.inputs[0]);
                    const double gv = gy[0];
                    for (std::int64_t i = 0; i < gx.size(); ++i) {
                        gx[i] += gv;
                    }
                }
                break;
            }
            case OpKind::kLeaf:
                break;
        }
    }

    GradientMap out;
    for (NodeId id = 0; static_cast<std::size_t>(id) < nodes_.size(); ++id) {
        const Node& n = nodes_[static_cast<std::size_t>(id)];
        if (n.kind == OpKind::kLeaf && n.requires_grad) {
            Tensor& g = grads[static_cast<std::size_t>(id)];
            out.insert(id, g.size() != 0 ? std::move(g) : Tensor(n.value.shape()));
        }
    }
    return out;
}

}  // namespace padapt
