#include "megu/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "megu/serialize.hpp"

namespace megu {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;

void require_labels(std::span<const int> labels, std::size_t batch, std::size_t k) {
    if (labels.size() != batch)
        throw ShapeError("label count " + std::to_string(labels.size()) +
                         " does not match batch size " + std::to_string(batch));
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw DomainError("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
}

// y = W x + b for one sample row.
void affine(const Tensor& w, const Tensor& b, std::span<const double> x,
            std::span<double> out) {
    const std::size_t rows = w.dim(0), cols = w.dim(1);
    for (std::size_t r = 0; r < rows; ++r) {
        double s = b[r];
        const auto wr = w.row(r);
        for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
        out[r] = s;
    }
}

} // namespace

Mlp::Mlp(std::vector<std::size_t> layer_dims, std::uint64_t seed, Activation activation)
    : layer_dims_(std::move(layer_dims)), activation_(activation), seed_(seed) {
    if (layer_dims_.size() < 2)
        throw ConfigError("classifier needs at least input and output dims");
    for (std::size_t d : layer_dims_)
        if (d == 0) throw ConfigError("classifier layer dims must be positive");
    Rng rng(mix_seed(seed, 0x6d6c7021));
    for (std::size_t l = 0; l + 1 < layer_dims_.size(); ++l) {
        const std::size_t in = layer_dims_[l], out = layer_dims_[l + 1];
        const double scale = 1.0 / std::sqrt(static_cast<double>(in));
        weights_.push_back(Tensor::randn({out, in}, rng, scale));
        biases_.push_back(Tensor::zeros({out}));
    }
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (const Tensor& w : weights_) n += w.size();
    for (const Tensor& b : biases_) n += b.size();
    return n;
}

bool Mlp::parameters_finite() const {
    for (const Tensor& w : weights_)
        if (!w.all_finite()) return false;
    for (const Tensor& b : biases_)
        if (!b.all_finite()) return false;
    return true;
}

std::vector<Tensor*> Mlp::parameter_tensors() {
    std::vector<Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

std::vector<const Tensor*> Mlp::parameter_tensors() const {
    std::vector<const Tensor*> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(&weights_[l]);
        out.push_back(&biases_[l]);
    }
    return out;
}

Tensor Mlp::batch_view(const Tensor& input) const {
    if (input.rank() == 1) {
        if (input.dim(0) != input_dim())
            throw ShapeError("input dim " + std::to_string(input.dim(0)) +
                             " does not match model input dim " + std::to_string(input_dim()));
        return Tensor({1, input.dim(0)}, std::vector<double>(input.data().begin(),
                                                             input.data().end()));
    }
    if (input.rank() != 2 || input.dim(1) != input_dim())
        throw ShapeError("expected batch [N, " + std::to_string(input_dim()) + "]");
    return input;
}

Tensor Mlp::forward(const Tensor& batch) const {
    const Tensor x = batch_view(batch);
    const std::size_t n = x.dim(0);
    const std::size_t k = num_classes();
    Tensor logits({n, k});

    std::vector<double> cur, next;
    for (std::size_t i = 0; i < n; ++i) {
        cur.assign(x.row(i).begin(), x.row(i).end());
        for (std::size_t l = 0; l < weights_.size(); ++l) {
            next.resize(weights_[l].dim(0));
            affine(weights_[l], biases_[l], cur, next);
            if (l + 1 < weights_.size())
                for (double& v : next) v = std::tanh(v);
            cur = next;
        }
        std::copy(cur.begin(), cur.end(), logits.row(i).begin());
    }
    return logits;
}

Gradients Mlp::grad_params(const Tensor& batch, std::span<const int> labels) const {
    const Tensor x = batch_view(batch);
    const std::size_t n = x.dim(0);
    const std::size_t layers = weights_.size();
    require_labels(labels, n, num_classes());

    Gradients g;
    for (std::size_t l = 0; l < layers; ++l) {
        g.weights.push_back(Tensor::zeros(weights_[l].shape()));
        g.biases.push_back(Tensor::zeros(biases_[l].shape()));
    }

    const double inv_n = 1.0 / static_cast<double>(n);
    // acts[l] is the input to layer l; acts[layers] holds the logits.
    std::vector<std::vector<double>> acts(layers + 1);
    std::vector<double> delta, prev_delta;

    for (std::size_t i = 0; i < n; ++i) {
        acts[0].assign(x.row(i).begin(), x.row(i).end());
        for (std::size_t l = 0; l < layers; ++l) {
            acts[l + 1].resize(weights_[l].dim(0));
            affine(weights_[l], biases_[l], acts[l], acts[l + 1]);
            if (l + 1 < layers)
                for (double& v : acts[l + 1]) v = std::tanh(v);
        }

        // dL/dlogits = softmax - onehot, scaled for the batch mean.
        delta = softmax(acts[layers]);
        delta[static_cast<std::size_t>(labels[i])] -= 1.0;
        for (double& v : delta) v *= inv_n;

        for (std::size_t l = layers; l-- > 0;) {
            Tensor& gw = g.weights[l];
            Tensor& gb = g.biases[l];
            const std::vector<double>& in = acts[l];
            for (std::size_t r = 0; r < gw.dim(0); ++r) {
                gb[r] += delta[r];
                auto gwr = gw.row(r);
                for (std::size_t c = 0; c < gw.dim(1); ++c) gwr[c] += delta[r] * in[c];
            }
            if (l == 0) break;
            prev_delta.assign(weights_[l].dim(1), 0.0);
            for (std::size_t r = 0; r < weights_[l].dim(0); ++r) {
                const auto wr = weights_[l].row(r);
                for (std::size_t c = 0; c < wr.size(); ++c) prev_delta[c] += wr[c] * delta[r];
            }
            // tanh'(z) = 1 - tanh(z)^2; acts[l] already holds tanh(z).
            for (std::size_t c = 0; c < prev_delta.size(); ++c)
                prev_delta[c] *= 1.0 - in[c] * in[c];
            delta = prev_delta;
        }
    }
    return g;
}

Tensor Mlp::grad_input(const Tensor& batch, std::span<const int> labels,
                       GradSign sign) const {
    const Tensor x = batch_view(batch);
    const std::size_t n = x.dim(0);
    const std::size_t layers = weights_.size();
    require_labels(labels, n, num_classes());

    Tensor grad(x.shape());
    std::vector<std::vector<double>> acts(layers + 1);
    std::vector<double> delta, prev_delta;
    const double flip = sign == GradSign::Ascent ? -1.0 : 1.0;

    for (std::size_t i = 0; i < n; ++i) {
        acts[0].assign(x.row(i).begin(), x.row(i).end());
        for (std::size_t l = 0; l < layers; ++l) {
            acts[l + 1].resize(weights_[l].dim(0));
            affine(weights_[l], biases_[l], acts[l], acts[l + 1]);
            if (l + 1 < layers)
                for (double& v : acts[l + 1]) v = std::tanh(v);
        }

        delta = softmax(acts[layers]);
        delta[static_cast<std::size_t>(labels[i])] -= 1.0;

        for (std::size_t l = layers; l-- > 0;) {
            prev_delta.assign(weights_[l].dim(1), 0.0);
            for (std::size_t r = 0; r < weights_[l].dim(0); ++r) {
                const auto wr = weights_[l].row(r);
                for (std::size_t c = 0; c < wr.size(); ++c) prev_delta[c] += wr[c] * delta[r];
            }
            if (l > 0) {
                const std::vector<double>& a = acts[l];
                for (std::size_t c = 0; c < prev_delta.size(); ++c)
                    prev_delta[c] *= 1.0 - a[c] * a[c];
            }
            delta = prev_delta;
        }
        auto out = grad.row(i);
        for (std::size_t c = 0; c < out.size(); ++c) out[c] = flip * delta[c];
    }
    return grad;
}

Tensor Mlp::grad_input(const Tensor& batch, int label, GradSign sign) const {
    const Tensor x = batch_view(batch);
    std::vector<int> labels(x.dim(0), label);
    return grad_input(x, labels, sign);
}

std::vector<double> softmax(std::span<const double> logits) {
    const double hi = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - hi);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

std::vector<double> per_sample_ce(const Tensor& logits, std::span<const int> labels) {
    if (logits.rank() != 2)
        throw ShapeError("per_sample_ce expects logits [N, K]");
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    require_labels(labels, n, k);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto row = logits.row(i);
        const double hi = *std::max_element(row.begin(), row.end());
        double z = 0.0;
        for (double v : row) z += std::exp(v - hi);
        out[i] = std::log(z) + hi - row[static_cast<std::size_t>(labels[i])];
    }
    return out;
}

double softmax_ce_loss(const Tensor& logits, std::span<const int> labels) {
    const std::vector<double> losses = per_sample_ce(logits, labels);
    double s = 0.0;
    for (double v : losses) s += v;
    return s / static_cast<double>(losses.size());
}

std::vector<int> argmax_rows(const Tensor& logits) {
    std::vector<int> out(logits.dim(0));
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        const auto row = logits.row(i);
        out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    }
    return out;
}

std::vector<std::uint8_t> serialize_checkpoint(const Mlp& model) {
    ByteWriter w;
    w.write_magic("MEGU-CKPT");
    w.write_u32(kCheckpointVersion);
    w.write_u32(static_cast<std::uint32_t>(model.layer_dims().size()));
    for (std::size_t d : model.layer_dims()) w.write_u32(static_cast<std::uint32_t>(d));
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        w.write_f64_span(model.weights()[l].data());
        w.write_f64_span(model.biases()[l].data());
    }
    return w.bytes();
}

Mlp deserialize_checkpoint(std::span<const std::uint8_t> bytes, Activation activation) {
    ByteReader r(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    r.expect_magic("MEGU-CKPT");
    const std::uint32_t version = r.read_u32();
    if (version != kCheckpointVersion)
        throw ParseError("unsupported checkpoint version " + std::to_string(version),
                         r.offset());
    const std::uint32_t ndims = r.read_u32();
    if (ndims < 2 || ndims > 64)
        throw ParseError("implausible layer dim count " + std::to_string(ndims), r.offset());
    std::vector<std::size_t> dims(ndims);
    for (auto& d : dims) d = r.read_u32();

    Mlp model(dims, 0, activation);
    for (std::size_t l = 0; l < model.num_layers(); ++l) {
        const std::size_t wn = model.weights()[l].size();
        model.weights()[l] = Tensor(model.weights()[l].shape(), r.read_f64_vec(wn));
        const std::size_t bn = model.biases()[l].size();
        model.biases()[l] = Tensor(model.biases()[l].shape(), r.read_f64_vec(bn));
    }
    if (r.remaining() != 0)
        throw ParseError("trailing bytes after checkpoint payload", r.offset());
    if (!model.parameters_finite())
        throw ParseError("checkpoint contains non-finite parameters");
    return model;
}

void save_checkpoint(const Mlp& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_checkpoint(model));
}

Mlp load_checkpoint(const std::filesystem::path& path, Activation activation) {
    return deserialize_checkpoint(read_file(path), activation);
}

std::array<std::uint8_t, 32> model_hash(const Mlp& model) {
    return sha256(serialize_checkpoint(model));
}

} // namespace megu
