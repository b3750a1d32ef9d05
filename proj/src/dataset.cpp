#include "megu/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "megu/serialize.hpp"

namespace megu {

namespace {

constexpr std::uint32_t kDatasetVersion = 1;

// Orthonormalize `count` seeded Gaussian rows in dimension `dim`
// (Gram-Schmidt with one re-orthogonalization pass).
Tensor orthonormal_basis(std::size_t count, std::size_t dim, Rng& rng) {
    Tensor basis({count, dim});
    for (std::size_t i = 0; i < count; ++i) {
        auto row = basis.row(i);
        for (double& v : row) v = rng.normal();
        for (int pass = 0; pass < 2; ++pass) {
            for (std::size_t j = 0; j < i; ++j) {
                const auto prev = basis.row(j);
                const double proj = dot(row, prev);
                for (std::size_t c = 0; c < dim; ++c) row[c] -= proj * prev[c];
            }
        }
        double norm = 0.0;
        for (double v : row) norm += v * v;
        norm = std::sqrt(norm);
        if (norm < 1e-9)
            throw ConfigError("degenerate basis draw; dimension too small for plan");
        for (double& v : row) v /= norm;
    }
    return basis;
}

Dataset draw_samples(const SyntheticSpec& spec, const Tensor& prototypes,
                     std::size_t per_class, Rng& rng,
                     const std::vector<std::string>& names, const Tensor& overlap) {
    const std::size_t k = spec.num_classes;
    const std::size_t n = k * per_class;
    Dataset ds;
    ds.inputs = Tensor({n, spec.dim});
    ds.labels.resize(n);
    ds.class_names = names;
    ds.overlap_truth = overlap;
    if (spec.coarse_groups > 0) {
        ds.coarse_labels.resize(n);
    }
    const std::size_t per_group = spec.coarse_groups > 0 ? k / spec.coarse_groups : 0;

    std::size_t row = 0;
    for (std::size_t c = 0; c < k; ++c) {
        for (std::size_t s = 0; s < per_class; ++s, ++row) {
            auto out = ds.inputs.row(row);
            const auto proto = prototypes.row(c);
            for (std::size_t d = 0; d < spec.dim; ++d)
                out[d] = proto[d] + spec.noise_std * rng.normal();
            ds.labels[row] = static_cast<int>(c);
            if (spec.coarse_groups > 0)
                ds.coarse_labels[row] = static_cast<int>(c / per_group);
        }
    }
    return ds;
}

} // namespace

std::size_t Dataset::num_coarse() const {
    if (coarse_labels.empty()) return 0;
    int hi = 0;
    for (int c : coarse_labels) hi = std::max(hi, c);
    return static_cast<std::size_t>(hi) + 1;
}

std::vector<int> Dataset::fine_to_coarse() const {
    if (coarse_labels.empty())
        throw TaskError("dataset has no coarse labels");
    std::vector<int> map(num_classes(), -1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int fine = labels[i];
        if (map[fine] == -1)
            map[fine] = coarse_labels[i];
        else if (map[fine] != coarse_labels[i])
            throw DomainError("fine class " + std::to_string(fine) +
                              " maps to multiple coarse classes");
    }
    for (std::size_t f = 0; f < map.size(); ++f)
        if (map[f] == -1)
            throw DomainError("fine class " + std::to_string(f) + " has no samples");
    return map;
}

void Dataset::validate() const {
    const std::size_t n = labels.size();
    const std::size_t k = num_classes();
    if (inputs.rank() != 2 || inputs.dim(0) != n)
        throw DomainError("dataset inputs shape does not match label count");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= k)
            throw DomainError("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(k) + ")");
    if (!coarse_labels.empty()) {
        if (coarse_labels.size() != n)
            throw DomainError("coarse label count does not match sample count");
        fine_to_coarse();
    }
    if (overlap_truth) {
        const Tensor& o = *overlap_truth;
        if (o.rank() != 2 || o.dim(0) != k || o.dim(1) != k)
            throw DomainError("overlap matrix is not K x K");
        for (std::size_t i = 0; i < k; ++i) {
            if (std::abs(o.at(i, i) - 1.0) > 1e-12)
                throw DomainError("overlap matrix diagonal must be 1");
            for (std::size_t j = 0; j < k; ++j)
                if (std::abs(o.at(i, j) - o.at(j, i)) > 1e-12)
                    throw DomainError("overlap matrix must be symmetric");
        }
    }
    if (!inputs.all_finite())
        throw DomainError("dataset contains non-finite inputs");
}

std::vector<SharedGroup> SyntheticSpec::default_plan_k8() {
    return {
        {0, 1, 4}, {1, 2, 1}, {2, 3, 3}, {3, 4, 1}, {4, 5, 2}, {5, 6, 1},
        {6, 7, 3}, {7, 0, 1}, {0, 2, 2}, {4, 6, 1}, {1, 3, 2}, {5, 7, 2},
        {3, 5, 1},
    };
}

SyntheticData gen_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    const std::size_t k = spec.num_classes;
    if (k < 2) throw ConfigError("synthetic data needs at least 2 classes");
    if (spec.coarse_groups > 0 && k % spec.coarse_groups != 0)
        throw ConfigError("coarse_groups must divide the class count");
    for (const SharedGroup& g : spec.overlap_plan) {
        if (g.class_a >= k || g.class_b >= k || g.class_a == g.class_b)
            throw ConfigError("overlap plan references invalid class pair (" +
                              std::to_string(g.class_a) + "," + std::to_string(g.class_b) + ")");
        if (g.count == 0)
            throw ConfigError("overlap plan group with zero patterns");
    }

    std::size_t shared_total = 0;
    for (const SharedGroup& g : spec.overlap_plan) shared_total += g.count;
    const std::size_t total_patterns = k * spec.unique_patterns + shared_total;
    if (total_patterns > spec.dim)
        throw ConfigError("plan needs " + std::to_string(total_patterns) +
                          " basis vectors but dimension is " + std::to_string(spec.dim));
    if (spec.unique_patterns == 0 && shared_total == 0)
        throw ConfigError("plan assigns no patterns at all");

    Rng rng(mix_seed(seed, 0xda7a5e7));
    SyntheticData out;
    out.basis = orthonormal_basis(total_patterns, spec.dim, rng);

    // Assign basis rows: per-class unique vectors first, then shared pools.
    out.class_patterns.assign(k, {});
    std::size_t next = 0;
    for (std::size_t c = 0; c < k; ++c)
        for (std::size_t u = 0; u < spec.unique_patterns; ++u)
            out.class_patterns[c].push_back(next++);
    for (const SharedGroup& g : spec.overlap_plan) {
        for (std::size_t i = 0; i < g.count; ++i) {
            out.class_patterns[g.class_a].push_back(next);
            out.class_patterns[g.class_b].push_back(next);
            ++next;
        }
    }

    Tensor prototypes({k, spec.dim});
    for (std::size_t c = 0; c < k; ++c) {
        auto proto = prototypes.row(c);
        for (std::size_t p : out.class_patterns[c]) {
            const auto b = out.basis.row(p);
            for (std::size_t d = 0; d < spec.dim; ++d) proto[d] += b[d];
        }
    }

    Tensor overlap({k, k});
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            std::set<std::size_t> a(out.class_patterns[i].begin(), out.class_patterns[i].end());
            std::size_t shared = 0;
            for (std::size_t p : out.class_patterns[j]) shared += a.count(p);
            const double denom = std::sqrt(static_cast<double>(out.class_patterns[i].size()) *
                                           static_cast<double>(out.class_patterns[j].size()));
            overlap.at(i, j) = denom > 0.0 ? static_cast<double>(shared) / denom : 0.0;
        }
    }

    std::vector<std::string> names;
    for (std::size_t c = 0; c < k; ++c) names.push_back("class_" + std::to_string(c));

    out.train = draw_samples(spec, prototypes, spec.per_class, rng, names, overlap);
    out.test = draw_samples(spec, prototypes, spec.per_class_test, rng, names, overlap);
    out.train.validate();
    out.test.validate();
    return out;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
    ds.validate();
    ByteWriter w;
    w.write_magic("MEGU-DATA");
    w.write_u32(kDatasetVersion);
    w.write_u64(ds.size());
    w.write_u32(static_cast<std::uint32_t>(ds.dim()));
    w.write_u32(static_cast<std::uint32_t>(ds.num_classes()));
    w.write_u8(ds.has_coarse() ? 1 : 0);
    w.write_u8(ds.overlap_truth ? 1 : 0);
    for (const std::string& name : ds.class_names) w.write_string(name);
    w.write_f64_span(ds.inputs.data());
    for (int y : ds.labels) w.write_u16(static_cast<std::uint16_t>(y));
    if (ds.has_coarse())
        for (int c : ds.coarse_labels) w.write_u16(static_cast<std::uint16_t>(c));
    if (ds.overlap_truth) w.write_f64_span(ds.overlap_truth->data());
    return w.bytes();
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
    ByteReader r(std::vector<std::uint8_t>(bytes.begin(), bytes.end()));
    r.expect_magic("MEGU-DATA");
    const std::uint32_t version = r.read_u32();
    if (version != kDatasetVersion)
        throw ParseError("unsupported dataset version " + std::to_string(version), r.offset());
    const std::uint64_t n = r.read_u64();
    const std::uint32_t d = r.read_u32();
    const std::uint32_t k = r.read_u32();
    const bool has_coarse = r.read_u8() != 0;
    const bool has_overlap = r.read_u8() != 0;

    Dataset ds;
    for (std::uint32_t i = 0; i < k; ++i) ds.class_names.push_back(r.read_string());
    ds.inputs = Tensor({static_cast<std::size_t>(n), d},
                       r.read_f64_vec(static_cast<std::size_t>(n) * d));
    ds.labels.resize(n);
    for (auto& y : ds.labels) {
        const std::size_t at = r.offset();
        const std::uint16_t raw = r.read_u16();
        if (raw >= k)
            throw ParseError("label " + std::to_string(raw) + " outside [0, " +
                                 std::to_string(k) + ")",
                             at);
        y = raw;
    }
    if (has_coarse) {
        ds.coarse_labels.resize(n);
        for (auto& c : ds.coarse_labels) c = r.read_u16();
    }
    if (has_overlap)
        ds.overlap_truth = Tensor({k, k}, r.read_f64_vec(std::size_t(k) * k));
    if (r.remaining() != 0)
        throw ParseError("trailing bytes after dataset payload", r.offset());
    ds.validate();
    return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_dataset(ds));
}

Dataset load_dataset(const std::filesystem::path& path) {
    return deserialize_dataset(read_file(path));
}

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::ClassWise: return "class_wise";
        case TaskKind::SubClass: return "sub_class";
        case TaskKind::Random: return "random";
    }
    return "?";
}

TaskKind parse_task_kind(const std::string& name) {
    if (name == "class_wise") return TaskKind::ClassWise;
    if (name == "sub_class") return TaskKind::SubClass;
    if (name == "random") return TaskKind::Random;
    throw ConfigError("unknown task kind \"" + name + "\"");
}

SplitResult split_task(const Dataset& ds, const TaskSpec& task) {
    const std::size_t n = ds.size();
    SplitResult out;

    if (task.kind == TaskKind::ClassWise || task.kind == TaskKind::SubClass) {
        if (task.target < 0 || static_cast<std::size_t>(task.target) >= ds.num_classes())
            throw TaskError("target class " + std::to_string(task.target) +
                            " outside [0, " + std::to_string(ds.num_classes()) + ")");
        if (task.kind == TaskKind::SubClass && !ds.has_coarse())
            throw TaskError("sub_class task requires a dataset with coarse labels");
        for (std::size_t i = 0; i < n; ++i) {
            if (ds.labels[i] == task.target)
                out.forget_set.push_back(i);
            else
                out.retain_set.push_back(i);
        }
        if (out.forget_set.empty())
            throw TaskError("target class " + std::to_string(task.target) +
                            " has no samples");
        return out;
    }

    if (task.count == 0 || task.count > n)
        throw TaskError("random forget count " + std::to_string(task.count) +
                        " invalid for dataset of size " + std::to_string(n));
    Rng rng(mix_seed(task.seed, 0x5b117));
    std::vector<std::size_t> chosen = rng.sample_without_replacement(n, task.count);
    std::vector<bool> is_forget(n, false);
    for (std::size_t i : chosen) is_forget[i] = true;
    for (std::size_t i = 0; i < n; ++i)
        (is_forget[i] ? out.forget_set : out.retain_set).push_back(i);
    return out;
}

std::vector<std::size_t> sample_finetune_retain(const std::vector<std::size_t>& retain_set,
                                                std::size_t n, std::uint64_t seed) {
    if (n > retain_set.size())
        throw ConfigError("requested " + std::to_string(n) + " retain samples but only " +
                          std::to_string(retain_set.size()) + " available");
    Rng rng(mix_seed(seed, 0xf1e7));
    std::vector<std::size_t> picks = rng.sample_without_replacement(retain_set.size(), n);
    std::vector<std::size_t> out;
    out.reserve(n);
    for (std::size_t p : picks) out.push_back(retain_set[p]);
    return out;
}

std::pair<Tensor, std::vector<int>> gather(const Dataset& ds,
                                           const std::vector<std::size_t>& indices) {
    Tensor x({indices.size(), ds.dim()});
    std::vector<int> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = ds.inputs.row(indices[i]);
        std::copy(src.begin(), src.end(), x.row(i).begin());
        y[i] = ds.labels[indices[i]];
    }
    return {std::move(x), std::move(y)};
}

} // namespace megu
