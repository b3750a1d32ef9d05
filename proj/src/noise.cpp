#include "megu/noise.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "megu/serialize.hpp"

namespace megu {

namespace {

constexpr std::uint32_t kCacheVersion = 1;

std::uint64_t key_tag(NoiseKey key, NoiseDirection direction) {
    return (static_cast<std::uint64_t>(static_cast<std::uint16_t>(key.label)) << 17) ^
           (static_cast<std::uint64_t>(static_cast<std::uint16_t>(key.perturb_label)) << 1) ^
           (direction == NoiseDirection::Away ? 1 : 0);
}

} // namespace

void NoiseConfig::validate() const {
    if (steps < 1) throw ConfigError("noise steps must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("noise learning rate must be positive");
    if (lambda_reg < 0.0) throw ConfigError("noise lambda must be nonnegative");
    if (batch < 1) throw ConfigError("noise batch must be >= 1");
}

std::vector<double> noise_objective(const Mlp& model, const Tensor& noise,
                                    int target_label, NoiseDirection direction,
                                    double lambda_reg) {
    const Tensor logits = model.forward(noise);
    std::vector<int> labels(noise.dim(0), target_label);
    std::vector<double> ce = per_sample_ce(logits, labels);
    const double sign = direction == NoiseDirection::Away ? -1.0 : 1.0;
    for (std::size_t b = 0; b < ce.size(); ++b) {
        double norm = 0.0;
        const auto row = noise.row(b);
        for (double v : row) norm += v * v;
        ce[b] = sign * ce[b] + lambda_reg * std::sqrt(norm);
    }
    return ce;
}

Tensor train_noise(const Mlp& model, int target_label, NoiseDirection direction,
                   const NoiseConfig& cfg) {
    cfg.validate();
    if (target_label < 0 || static_cast<std::size_t>(target_label) >= model.num_classes())
        throw DomainError("noise target label " + std::to_string(target_label) +
                          " outside [0, " + std::to_string(model.num_classes()) + ")");

    Rng rng(mix_seed(cfg.seed, 0x401c3));
    Tensor noise = Tensor::randn({cfg.batch, model.input_dim()}, rng);

    const GradSign sign =
        direction == NoiseDirection::Away ? GradSign::Ascent : GradSign::Descent;
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        Tensor grad = model.grad_input(noise, target_label, sign);
        for (std::size_t b = 0; b < cfg.batch; ++b) {
            auto n = noise.row(b);
            auto g = grad.row(b);
            double norm = 0.0;
            for (double v : n) norm += v * v;
            norm = std::sqrt(norm);
            // d/dN of lambda*||N|| is lambda*N/||N||; flat at the origin.
            const double reg = norm > 1e-12 ? cfg.lambda_reg / norm : 0.0;
            for (std::size_t d = 0; d < n.size(); ++d)
                n[d] -= cfg.learning_rate * (g[d] + reg * n[d]);
        }
        if (!noise.all_finite())
            throw NumericError("noise optimization diverged at step " +
                               std::to_string(step));
    }
    return noise;
}

Tensor combine(const Tensor& pos, const Tensor& neg, double alpha) {
    return convex_combine(pos, neg, alpha);
}

const NoisePair* NoiseSet::find(NoiseKey key) const {
    const auto it = std::lower_bound(pairs.begin(), pairs.end(), key,
                                     [](const NoisePair& p, NoiseKey k) { return p.key < k; });
    if (it == pairs.end() || !(it->key == key)) return nullptr;
    return &*it;
}

NoiseSet forge_pairs(const Mlp& model, const PerturbMap& map, const NoiseConfig& cfg) {
    cfg.validate();
    if (map.entries.empty())
        throw ConfigError("perturb map is empty, nothing to forge");

    std::map<NoiseKey, bool> keys;
    for (const PerturbEntry& e : map.entries)
        keys[{e.label, e.perturb_label}] = true;

    NoiseSet set;
    set.model_digest = model_hash(model);
    set.config = cfg;
    for (const auto& [key, _] : keys) {
        NoiseConfig toward = cfg;
        toward.seed = mix_seed(cfg.seed, key_tag(key, NoiseDirection::Toward));
        NoiseConfig away = cfg;
        away.seed = mix_seed(cfg.seed, key_tag(key, NoiseDirection::Away));
        NoisePair pair;
        pair.key = key;
        pair.pos = train_noise(model, key.perturb_label, NoiseDirection::Toward, toward);
        pair.neg = train_noise(model, key.label, NoiseDirection::Away, away);
        set.pairs.push_back(std::move(pair));
    }
    return set;
}

std::vector<std::uint8_t> serialize_noise_set(const NoiseSet& set) {
    ByteWriter w;
    w.write_magic("MEGU-NOIZ");
    w.write_u32(kCacheVersion);
    w.write_bytes(set.model_digest.data(), set.model_digest.size());
    w.write_u64(set.config.steps);
    w.write_f64(set.config.learning_rate);
    w.write_f64(set.config.lambda_reg);
    w.write_u64(set.config.batch);
    w.write_u64(set.config.seed);
    w.write_u32(static_cast<std::uint32_t>(set.pairs.size()));
    for (const NoisePair& p : set.pairs) {
        w.write_u16(static_cast<std::uint16_t>(p.key.label));
        w.write_u16(static_cast<std::uint16_t>(p.key.perturb_label));
        w.write_u64(p.pos.dim(0));
        w.write_u64(p.pos.dim(1));
        w.write_f64_span(p.pos.data());
        w.write_f64_span(p.neg.data());
    }
    return w.bytes();
}

NoiseSet deserialize_noise_set(std::span<const std::uint8_t> bytes) {
    ByteReader r(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    try {
        r.expect_magic("MEGU-NOIZ");
        const std::uint32_t version = r.read_u32();
        if (version != kCacheVersion)
            throw ParseError("unsupported noise cache version " + std::to_string(version),
                             r.offset());
        NoiseSet set;
        for (auto& b : set.model_digest) b = r.read_u8();
        set.config.steps = r.read_u64();
        set.config.learning_rate = r.read_f64();
        set.config.lambda_reg = r.read_f64();
        set.config.batch = r.read_u64();
        set.config.seed = r.read_u64();
        const std::uint32_t count = r.read_u32();
        for (std::uint32_t i = 0; i < count; ++i) {
            NoisePair p;
            p.key.label = r.read_u16();
            p.key.perturb_label = r.read_u16();
            const std::size_t batch = r.read_u64();
            const std::size_t dim = r.read_u64();
            p.pos = Tensor({batch, dim}, r.read_f64_vec(batch * dim));
            p.neg = Tensor({batch, dim}, r.read_f64_vec(batch * dim));
            if (!p.pos.all_finite() || !p.neg.all_finite())
                throw ParseError("noise pair contains non-finite values", r.offset());
            set.pairs.push_back(std::move(p));
        }
        if (r.remaining() != 0)
            throw ParseError("trailing bytes after noise cache payload", r.offset());
        if (!std::is_sorted(set.pairs.begin(), set.pairs.end(),
                            [](const NoisePair& a, const NoisePair& b) { return a.key < b.key; }))
            throw ParseError("noise cache keys out of order", r.offset());
        return set;
    } catch (const ParseError& e) {
        throw CacheError(std::string("corrupt noise cache: ") + e.what());
    }
}

void cache_store(const NoiseSet& set, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_noise_set(set));
}

LoadedNoise cache_load(const std::filesystem::path& path,
                       const std::array<std::uint8_t, 32>& expected_model_digest,
                       bool allow_mismatch) {
    LoadedNoise out{deserialize_noise_set(read_file(path)), false};
    if (out.set.model_digest != expected_model_digest) {
        if (!allow_mismatch)
            throw CacheError("noise cache " + path.string() +
                             " was forged against a different checkpoint (hash " +
                             hex_digest(out.set.model_digest) + ", expected " +
                             hex_digest(expected_model_digest) + ")");
        out.provenance_override = true;
    }
    return out;
}

} // namespace megu
