#include "sfl/convnet.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sfl {

namespace {

template <class... Ts>
struct overloaded : Ts... {
    using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t act_size(const ActShape& s) {
    return shape_size(s);
}

Shape batch_shape(std::size_t batch, const ActShape& s) {
    Shape out{batch};
    out.insert(out.end(), s.begin(), s.end());
    return out;
}

// Forward cache: acts[i] is the input of layer i, acts[i + 1] its output.
struct Activations {
    std::vector<Tensor> acts;
    std::vector<std::vector<std::size_t>> pool_argmax;  // per layer, flat input offsets
};

void conv_forward(const Tensor& in, const ActShape& is, const ActShape& os, const ConvLayer& L,
                  const Tensor& w, const Tensor& bias, Tensor& out) {
    const std::size_t B = in.dim(0), C = is[0], H = is[1], W = is[2];
    const std::size_t O = os[0], OH = os[1], OW = os[2], K = L.kernel, S = L.stride;
    const double* x = in.data().data();
    const double* wt = w.data().data();
    double* y = out.data().data();
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x + b * C * H * W;
        for (std::size_t o = 0; o < O; ++o) {
            double* yo = y + ((b * O + o) * OH) * OW;
            std::fill(yo, yo + OH * OW, bias[o]);
            for (std::size_t c = 0; c < C; ++c) {
                const double* xc = xb + c * H * W;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const double wv = wt[((o * C + c) * K + ky) * K + kx];
                        for (std::size_t oy = 0; oy < OH; ++oy) {
                            const double* xr = xc + (oy * S + ky) * W + kx;
                            double* yr = yo + oy * OW;
                            for (std::size_t ox = 0; ox < OW; ++ox) yr[ox] += wv * xr[ox * S];
                        }
                    }
                }
            }
        }
    }
}

void conv_backward(const Tensor& in, const ActShape& is, const ActShape& os, const ConvLayer& L,
                   const Tensor& w, const Tensor& dout, Tensor& dw, Tensor& db, Tensor* din) {
    const std::size_t B = in.dim(0), C = is[0], H = is[1], W = is[2];
    const std::size_t O = os[0], OH = os[1], OW = os[2], K = L.kernel, S = L.stride;
    const double* x = in.data().data();
    const double* wt = w.data().data();
    const double* gy = dout.data().data();
    double* gw = dw.data().data();
    double* gx = din ? din->data().data() : nullptr;
    for (std::size_t b = 0; b < B; ++b) {
        const double* xb = x + b * C * H * W;
        for (std::size_t o = 0; o < O; ++o) {
            const double* go = gy + ((b * O + o) * OH) * OW;
            double bsum = 0.0;
            for (std::size_t i = 0; i < OH * OW; ++i) bsum += go[i];
            db[o] += bsum;
            for (std::size_t c = 0; c < C; ++c) {
                const double* xc = xb + c * H * W;
                double* gxc = gx ? gx + (b * C + c) * H * W : nullptr;
                for (std::size_t ky = 0; ky < K; ++ky) {
                    for (std::size_t kx = 0; kx < K; ++kx) {
                        const std::size_t widx = ((o * C + c) * K + ky) * K + kx;
                        const double wv = wt[widx];
                        double acc = 0.0;
                        for (std::size_t oy = 0; oy < OH; ++oy) {
                            const double* xr = xc + (oy * S + ky) * W + kx;
                            const double* gr = go + oy * OW;
                            for (std::size_t ox = 0; ox < OW; ++ox) acc += gr[ox] * xr[ox * S];
                            if (gxc) {
                                double* gxr = gxc + (oy * S + ky) * W + kx;
                                for (std::size_t ox = 0; ox < OW; ++ox) gxr[ox * S] += wv * gr[ox];
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
}

void pool_forward(const Tensor& in, const ActShape& is, const ActShape& os, const MaxPoolLayer& L,
                  Tensor& out, std::vector<std::size_t>& argmax_idx) {
    const std::size_t B = in.dim(0), C = is[0], H = is[1], W = is[2];
    const std::size_t OH = os[1], OW = os[2], K = L.kernel, S = L.stride;
    argmax_idx.assign(out.size(), 0);
    const double* x = in.data().data();
    double* y = out.data().data();
    std::size_t oi = 0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t c = 0; c < C; ++c) {
            const std::size_t base = (b * C + c) * H * W;
            for (std::size_t oy = 0; oy < OH; ++oy) {
                for (std::size_t ox = 0; ox < OW; ++ox, ++oi) {
                    std::size_t best = base + (oy * S) * W + ox * S;
                    double bv = x[best];
                    for (std::size_t ky = 0; ky < K; ++ky) {
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const std::size_t idx = base + (oy * S + ky) * W + ox * S + kx;
                            if (x[idx] > bv) {
                                bv = x[idx];
                                best = idx;
                            }
                        }
                    }
                    y[oi] = bv;
                    argmax_idx[oi] = best;
                }
            }
        }
    }
}

void fc_forward(const Tensor& in, const Tensor& w, const Tensor& bias, Tensor& out) {
    const std::size_t B = in.dim(0), I = w.dim(1), O = w.dim(0);
    for (std::size_t b = 0; b < B; ++b) {
        const double* x = in.data().data() + b * I;
        double* y = out.data().data() + b * O;
        for (std::size_t o = 0; o < O; ++o) {
            const double* wr = w.data().data() + o * I;
            double s = bias[o];
            for (std::size_t i = 0; i < I; ++i) s += wr[i] * x[i];
            y[o] = s;
        }
    }
}

void softmax_rows(const Tensor& logits, Tensor& out) {
    const std::size_t B = logits.dim(0), D = logits.row_size();
    for (std::size_t b = 0; b < B; ++b) {
        auto z = logits.row(b);
        auto p = out.row(b);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (std::size_t i = 0; i < D; ++i) {
            p[i] = std::exp(z[i] - m);
            s += p[i];
        }
        for (std::size_t i = 0; i < D; ++i) p[i] /= s;
    }
}

void check_batch(const NetSpec& spec, const Tensor& batch) {
    if (batch.rank() != 4 || batch.dim(1) != spec.in_channels || batch.dim(2) != spec.in_height ||
        batch.dim(3) != spec.in_width)
        throw DimensionError("batch shape does not match network input " + std::to_string(spec.in_channels) +
                             "x" + std::to_string(spec.in_height) + "x" + std::to_string(spec.in_width));
}

void check_params(const NetParams& params, const NetSpec& spec) {
    if (params.weights.size() != spec.layers.size() || params.biases.size() != spec.layers.size())
        throw DimensionError("parameters do not match network spec");
}

// Runs layers [0, last] and fills the cache.
Activations run_forward(const NetParams& params, const NetSpec& spec, const Tensor& batch, std::size_t last) {
    check_batch(spec, batch);
    check_params(params, spec);
    const auto shapes = spec.shapes();
    const std::size_t B = batch.dim(0);
    Activations cache;
    cache.acts.reserve(last + 2);
    cache.acts.push_back(batch);
    cache.pool_argmax.resize(spec.layers.size());
    for (std::size_t i = 0; i <= last; ++i) {
        const Tensor& in = cache.acts.back();
        Tensor out(batch_shape(B, shapes[i + 1]));
        std::visit(overloaded{
                       [&](const ConvLayer& L) {
                           conv_forward(in, shapes[i], shapes[i + 1], L, params.weights[i], params.biases[i], out);
                       },
                       [&](const ReluLayer&) {
                           for (std::size_t j = 0; j < in.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
                       },
                       [&](const MaxPoolLayer& L) {
                           pool_forward(in, shapes[i], shapes[i + 1], L, out, cache.pool_argmax[i]);
                       },
                       [&](const FlattenLayer&) { std::copy(in.data().begin(), in.data().end(), out.data().begin()); },
                       [&](const FcLayer&) { fc_forward(in, params.weights[i], params.biases[i], out); },
                       [&](const SoftmaxLayer&) { softmax_rows(in, out); },
                   },
                   spec.layers[i]);
        cache.acts.push_back(std::move(out));
    }
    return cache;
}

Tensor flatten_rows(Tensor t) {
    const std::size_t B = t.dim(0);
    const std::size_t D = t.row_size();
    return t.reshaped({B, D});
}

void check_labels(const NetSpec& spec, const Tensor& batch, std::span<const Label> labels) {
    if (labels.size() != batch.dim(0)) throw DimensionError("label count does not match batch size");
    for (Label l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= spec.class_count)
            throw ContractError("label " + std::to_string(l) + " out of range [0, " +
                                std::to_string(spec.class_count) + ")");
}

double accumulate_ce(const Tensor& logits, std::span<const Label> labels) {
    const std::size_t B = logits.dim(0);
    double total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        auto z = logits.row(b);
        const double m = *std::max_element(z.begin(), z.end());
        double s = 0.0;
        for (double v : z) s += std::exp(v - m);
        total += m + std::log(s) - z[static_cast<std::size_t>(labels[b])];
    }
    return total / static_cast<double>(B);
}

}  // namespace

std::string layer_name(const Layer& layer) {
    return std::visit(overloaded{
                          [](const ConvLayer& l) {
                              return "conv(" + std::to_string(l.out_channels) + "," + std::to_string(l.kernel) +
                                     "," + std::to_string(l.stride) + ")";
                          },
                          [](const ReluLayer&) { return std::string("relu"); },
                          [](const MaxPoolLayer& l) {
                              return "maxpool(" + std::to_string(l.kernel) + "," + std::to_string(l.stride) + ")";
                          },
                          [](const FlattenLayer&) { return std::string("flatten"); },
                          [](const FcLayer& l) { return "fc(" + std::to_string(l.out_dim) + ")"; },
                          [](const SoftmaxLayer&) { return std::string("softmax"); },
                      },
                      layer);
}

std::string tap_name(TapId tap) {
    switch (tap) {
        case TapId::ConvLast: return "conv_last";
        case TapId::FcPenultimate: return "fc_penultimate";
        case TapId::Head: return "head";
    }
    return "?";
}

TapId parse_tap(const std::string& name) {
    if (name == "conv_last") return TapId::ConvLast;
    if (name == "fc_penultimate") return TapId::FcPenultimate;
    if (name == "head") return TapId::Head;
    throw ContractError("unknown tap '" + name + "'");
}

std::vector<ActShape> NetSpec::shapes() const {
    std::vector<ActShape> out;
    out.push_back({in_channels, in_height, in_width});
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const ActShape& s = out.back();
        const std::string where = "layer " + std::to_string(i) + " (" + layer_name(layers[i]) + ")";
        ActShape next = std::visit(
            overloaded{
                [&](const ConvLayer& L) -> ActShape {
                    if (s.size() != 3) throw ContractError(where + ": needs a spatial input");
                    if (L.out_channels == 0 || L.kernel == 0 || L.stride == 0)
                        throw ContractError(where + ": zero extent");
                    if (s[1] < L.kernel || s[2] < L.kernel) throw ContractError(where + ": kernel larger than input");
                    return {L.out_channels, (s[1] - L.kernel) / L.stride + 1, (s[2] - L.kernel) / L.stride + 1};
                },
                [&](const ReluLayer&) -> ActShape { return s; },
                [&](const MaxPoolLayer& L) -> ActShape {
                    if (s.size() != 3) throw ContractError(where + ": needs a spatial input");
                    if (L.kernel == 0 || L.stride == 0) throw ContractError(where + ": zero extent");
                    if (s[1] < L.kernel || s[2] < L.kernel) throw ContractError(where + ": window larger than input");
                    return {s[0], (s[1] - L.kernel) / L.stride + 1, (s[2] - L.kernel) / L.stride + 1};
                },
                [&](const FlattenLayer&) -> ActShape { return {act_size(s)}; },
                [&](const FcLayer& L) -> ActShape {
                    if (s.size() != 1) throw ContractError(where + ": needs a flat input");
                    if (L.out_dim == 0) throw ContractError(where + ": zero outputs");
                    return {L.out_dim};
                },
                [&](const SoftmaxLayer&) -> ActShape {
                    if (s.size() != 1) throw ContractError(where + ": needs a flat input");
                    return s;
                },
            },
            layers[i]);
        for (std::size_t e : next)
            if (e == 0) throw ContractError(where + ": empty output");
        out.push_back(std::move(next));
    }
    return out;
}

void NetSpec::validate() const {
    if (in_channels == 0 || in_height == 0 || in_width == 0) throw ContractError("network input has a zero extent");
    if (class_count == 0) throw ContractError("class_count must be positive");
    if (layers.size() < 2 || !std::holds_alternative<SoftmaxLayer>(layers.back()))
        throw ContractError("network must end with softmax");
    const auto* head = std::get_if<FcLayer>(&layers[layers.size() - 2]);
    if (!head) throw ContractError("softmax must follow a fully connected head");
    if (head->out_dim != class_count)
        throw ContractError("head width " + std::to_string(head->out_dim) + " != class_count " +
                            std::to_string(class_count));
    bool has_penultimate_fc = false;
    for (std::size_t i = 0; i + 2 < layers.size(); ++i) {
        if (std::holds_alternative<SoftmaxLayer>(layers[i])) throw ContractError("softmax must be the last layer");
        if (std::holds_alternative<FcLayer>(layers[i])) has_penultimate_fc = true;
    }
    if (!has_penultimate_fc) throw ContractError("network needs a fully connected layer before the head");
    (void)shapes();
}

std::size_t NetSpec::head_index() const {
    return layers.size() - 2;
}

std::size_t NetSpec::tap_layer(TapId tap) const {
    switch (tap) {
        case TapId::Head: return layers.size() - 1;
        case TapId::FcPenultimate: return head_index() - 1;
        case TapId::ConvLast: {
            for (std::size_t i = layers.size(); i-- > 0;) {
                if (std::holds_alternative<ConvLayer>(layers[i])) {
                    if (i + 1 < layers.size() && std::holds_alternative<ReluLayer>(layers[i + 1])) return i + 1;
                    return i;
                }
            }
            throw ContractError("network has no convolutional layer for the conv_last tap");
        }
    }
    throw ContractError("invalid tap");
}

std::size_t NetSpec::tap_width(TapId tap) const {
    return act_size(shapes()[tap_layer(tap) + 1]);
}

NetSpec desk_spec(std::size_t channels, std::size_t size, std::size_t classes, std::size_t penultimate) {
    NetSpec spec;
    spec.in_channels = channels;
    spec.in_height = size;
    spec.in_width = size;
    spec.class_count = classes;
    spec.layers = {ConvLayer{8, 3, 1}, ReluLayer{},        MaxPoolLayer{2, 2}, ConvLayer{16, 3, 1},
                   ReluLayer{},        MaxPoolLayer{2, 2}, FlattenLayer{},     FcLayer{penultimate},
                   ReluLayer{},        FcLayer{classes},   SoftmaxLayer{}};
    spec.validate();
    return spec;
}

bool NetParams::all_finite() const {
    for (const auto& t : weights)
        if (!t.all_finite()) return false;
    for (const auto& t : biases)
        if (!t.all_finite()) return false;
    return true;
}

std::size_t NetParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : weights) n += t.size();
    for (const auto& t : biases) n += t.size();
    return n;
}

NetParams init_params(const NetSpec& spec, Rng& rng) {
    spec.validate();
    const auto shapes = spec.shapes();
    NetParams p;
    p.weights.resize(spec.layers.size());
    p.biases.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
            const std::size_t in_c = shapes[i][0];
            const std::size_t fan_in = in_c * c->kernel * c->kernel;
            Tensor w({c->out_channels, in_c, c->kernel, c->kernel});
            const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
            for (auto& v : w.data()) v = rng.normal(0.0, sd);
            p.weights[i] = std::move(w);
            p.biases[i] = Tensor({c->out_channels});
        } else if (const auto* f = std::get_if<FcLayer>(&spec.layers[i])) {
            const std::size_t fan_in = shapes[i][0];
            Tensor w({f->out_dim, fan_in});
            const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
            for (auto& v : w.data()) v = rng.normal(0.0, sd);
            p.weights[i] = std::move(w);
            p.biases[i] = Tensor({f->out_dim});
        }
    }
    return p;
}

void validate_params(const NetSpec& spec, const NetParams& params) {
    spec.validate();
    check_params(params, spec);
    const auto shapes = spec.shapes();
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        Shape w, b;
        if (const auto* c = std::get_if<ConvLayer>(&spec.layers[i])) {
            w = {c->out_channels, shapes[i][0], c->kernel, c->kernel};
            b = {c->out_channels};
        } else if (const auto* f = std::get_if<FcLayer>(&spec.layers[i])) {
            w = {f->out_dim, shapes[i][0]};
            b = {f->out_dim};
        }
        const bool ok = w.empty() ? (params.weights[i].empty() && params.biases[i].empty())
                                  : (params.weights[i].shape() == w && params.biases[i].shape() == b);
        if (!ok) throw DimensionError("parameters of layer " + std::to_string(i) + " do not match the network layout");
    }
}

Tensor forward(const NetParams& params, const NetSpec& spec, const Tensor& batch, TapId tap) {
    const std::size_t last = spec.tap_layer(tap);
    auto cache = run_forward(params, spec, batch, last);
    return flatten_rows(std::move(cache.acts.back()));
}

Tensor forward(const Network& net, const Tensor& batch, TapId tap) {
    return forward(net.params, net.spec, batch, tap);
}

Tensor forward_logits(const NetParams& params, const NetSpec& spec, const Tensor& batch) {
    auto cache = run_forward(params, spec, batch, spec.head_index());
    return flatten_rows(std::move(cache.acts.back()));
}

double mean_cross_entropy(const NetParams& params, const NetSpec& spec, const Tensor& batch,
                          std::span<const Label> labels) {
    check_labels(spec, batch, labels);
    return accumulate_ce(forward_logits(params, spec, batch), labels);
}

LossAndGrads loss_and_grads(const NetParams& params, const NetSpec& spec, const Tensor& batch,
                            std::span<const Label> labels, std::optional<std::size_t> freeze_below) {
    check_labels(spec, batch, labels);
    const std::size_t head = spec.head_index();
    auto cache = run_forward(params, spec, batch, head);
    const auto shapes = spec.shapes();
    const std::size_t B = batch.dim(0);

    LossAndGrads out;
    const Tensor& logits = cache.acts[head + 1];
    out.loss = accumulate_ce(logits, labels);

    out.grads.weights.resize(spec.layers.size());
    out.grads.biases.resize(spec.layers.size());
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        out.grads.weights[i] = Tensor(params.weights[i].shape());
        out.grads.biases[i] = Tensor(params.biases[i].shape());
    }

    // d(mean CE)/d(logits) = (softmax - onehot) / B
    Tensor grad(logits.shape());
    softmax_rows(logits, grad);
    for (std::size_t b = 0; b < B; ++b) {
        auto g = grad.row(b);
        g[static_cast<std::size_t>(labels[b])] -= 1.0;
        for (auto& v : g) v /= static_cast<double>(B);
    }

    const std::size_t stop = freeze_below.value_or(0);
    for (std::size_t i = head + 1; i-- > 0;) {
        if (i < stop) break;
        const Tensor& in = cache.acts[i];
        const bool need_input_grad = i > stop;
        Tensor din;
        if (need_input_grad) din = Tensor(in.shape());
        std::visit(overloaded{
                       [&](const ConvLayer& L) {
                           conv_backward(in, shapes[i], shapes[i + 1], L, params.weights[i], grad,
                                         out.grads.weights[i], out.grads.biases[i],
                                         need_input_grad ? &din : nullptr);
                       },
                       [&](const ReluLayer&) {
                           if (!need_input_grad) return;
                           for (std::size_t j = 0; j < in.size(); ++j) din[j] = in[j] > 0.0 ? grad[j] : 0.0;
                       },
                       [&](const MaxPoolLayer&) {
                           if (!need_input_grad) return;
                           const auto& idx = cache.pool_argmax[i];
                           for (std::size_t j = 0; j < grad.size(); ++j) din[idx[j]] += grad[j];
                       },
                       [&](const FlattenLayer&) {
                           if (!need_input_grad) return;
                           std::copy(grad.data().begin(), grad.data().end(), din.data().begin());
                       },
                       [&](const FcLayer&) {
                           const Tensor& w = params.weights[i];
                           const std::size_t O = w.dim(0), I = w.dim(1);
                           Tensor& gw = out.grads.weights[i];
                           Tensor& gb = out.grads.biases[i];
                           for (std::size_t b = 0; b < B; ++b) {
                               const double* x = in.data().data() + b * I;
                               const double* gy = grad.data().data() + b * O;
                               double* gx = need_input_grad ? din.data().data() + b * I : nullptr;
                               for (std::size_t o = 0; o < O; ++o) {
                                   const double g = gy[o];
                                   gb[o] += g;
                                   double* gwr = gw.data().data() + o * I;
                                   const double* wr = w.data().data() + o * I;
                                   for (std::size_t k = 0; k < I; ++k) {
                                       gwr[k] += g * x[k];
                                       if (gx) gx[k] += g * wr[k];
                                   }
                               }
                           }
                       },
                       [&](const SoftmaxLayer&) { throw ContractError("softmax inside the trunk"); },
                   },
                   spec.layers[i]);
        if (!need_input_grad) break;
        grad = std::move(din);
    }
    return out;
}

void TrainConfig::validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("learning_rate must be a finite nonnegative number");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be nonnegative");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (lr_schedule && (lr_schedule->every_n_epochs == 0 || !(lr_schedule->factor > 0.0)))
        throw ConfigError("step schedule needs a positive factor and period");
}

double TrainConfig::rate_at(std::size_t epoch) const {
    if (!lr_schedule) return learning_rate;
    const auto steps = static_cast<double>(epoch / lr_schedule->every_n_epochs);
    return learning_rate * std::pow(lr_schedule->factor, steps);
}

TrainConfig finetune_config(TrainConfig cfg) {
    cfg.learning_rate *= 0.1;
    return cfg;
}

void SgdMomentum::step(std::span<double> param, std::span<const double> grad, std::span<double> velocity, double lr,
                       bool decay) const {
    const double wd = decay ? weight_decay_ : 0.0;
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum_ * velocity[i] - lr * (grad[i] + wd * param[i]);
        param[i] += velocity[i];
    }
}

void SgdMomentum::step(NetParams& params, const NetParams& grads, NetParams& velocity, double lr,
                       std::optional<std::size_t> freeze_below) const {
    const std::size_t stop = freeze_below.value_or(0);
    for (std::size_t i = stop; i < params.weights.size(); ++i) {
        step(params.weights[i].data(), grads.weights[i].data(), velocity.weights[i].data(), lr, true);
        step(params.biases[i].data(), grads.biases[i].data(), velocity.biases[i].data(), lr, false);
    }
}

TrainResult train(const NetParams& params, const NetSpec& spec, const Tensor& images, std::span<const Label> labels,
                  const TrainConfig& cfg) {
    cfg.validate();
    spec.validate();
    if (images.rank() == 0 || images.dim(0) == 0) throw ContractError("train: empty dataset");
    const std::size_t n = images.dim(0);
    if (labels.size() != n) throw DimensionError("train: label count does not match image count");
    if (cfg.batch_size > n)
        throw ConfigError("train: batch_size " + std::to_string(cfg.batch_size) + " exceeds dataset size " +
                          std::to_string(n));

    TrainResult result{params, {}};
    NetParams velocity;
    for (const auto& t : params.weights) velocity.weights.emplace_back(t.shape());
    for (const auto& t : params.biases) velocity.biases.emplace_back(t.shape());
    const SgdMomentum opt(cfg.momentum, cfg.weight_decay);
    Rng rng(cfg.seed);

    std::vector<Label> batch_labels;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = cfg.rate_at(epoch);
        const auto order = rng.permutation(n);
        double total = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            const Tensor batch = images.take_rows(idx);
            batch_labels.clear();
            for (std::size_t j : idx) batch_labels.push_back(labels[j]);
            auto lg = loss_and_grads(result.params, spec, batch, batch_labels, cfg.freeze_below);
            opt.step(result.params, lg.grads, velocity, lr, cfg.freeze_below);
            total += lg.loss * static_cast<double>(idx.size());
        }
        const double mean = total / static_cast<double>(n);
        if (!std::isfinite(mean) || !result.params.all_finite())
            throw ConvergenceError("train: loss diverged at epoch " + std::to_string(epoch));
        result.loss_history.push_back(mean);
    }
    return result;
}

Network reinit_head(const Network& net, std::size_t new_class_count, Rng& rng) {
    if (new_class_count == 0) throw ContractError("reinit_head: class count must be positive");
    Network out = net;
    const std::size_t h = out.spec.head_index();
    out.spec.layers[h] = FcLayer{new_class_count};
    out.spec.class_count = new_class_count;
    const std::size_t fan_in = net.params.weights[h].dim(1);
    Tensor w({new_class_count, fan_in});
    const double sd = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (auto& v : w.data()) v = rng.normal(0.0, sd);
    out.params.weights[h] = std::move(w);
    out.params.biases[h] = Tensor({new_class_count});
    out.spec.validate();
    return out;
}

std::size_t argmax(std::span<const double> v) {
    if (v.empty()) throw ContractError("argmax of an empty vector");
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

}  // namespace sfl
