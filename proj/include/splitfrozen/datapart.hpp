#pragma once

// Dataset partitioning across devices (IID and Dirichlet label skew) and the
// canonical pooled shuffle the server applies before training.
//
// The shuffle is keyed by global sample id: pooled samples are sorted by id
// first, then permuted with the pinned Fisher-Yates. The output stream
// therefore depends only on (sample multiset, seed), never on which device
// held which sample or in which order batches arrived. That invariance is
// the mechanism that neutralizes label-skewed partitions.

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/rng.hpp"

namespace splitfrozen {

enum class PartitionMode { kIid, kDirichlet };

struct PartitionSpec {
    std::uint32_t num_devices = 1;
    PartitionMode mode = PartitionMode::kIid;
    double alpha = 1.0;  // Dirichlet concentration; smaller = more skew
    std::uint64_t seed = 0;

    void validate() const {
        if (num_devices < 1) throw std::invalid_argument("PartitionSpec: need >= 1 device");
        if (mode == PartitionMode::kDirichlet && !(alpha > 0.0))
            throw std::invalid_argument("PartitionSpec: alpha must be positive");
    }
};

struct DeviceShard {
    std::uint32_t device_id = 0;
    std::vector<std::uint64_t> sample_indices;
    std::vector<std::uint64_t> class_histogram;
};

namespace detail {

// Marsaglia-Tsang gamma sampler; alpha < 1 handled by the boost trick.
inline double gamma_draw(double alpha, Rng& rng) {
    if (alpha < 1.0) {
        const double u = rng.next_double_open();
        return gamma_draw(alpha + 1.0, rng) * std::pow(u, 1.0 / alpha);
    }
    const double d = alpha - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = rng.next_gaussian();
        double v = 1.0 + c * x;
        if (v <= 0.0) continue;
        v = v * v * v;
        const double u = rng.next_double_open();
        if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
}

inline std::vector<double> dirichlet_draw(double alpha, std::size_t n, Rng& rng) {
    std::vector<double> out(n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = gamma_draw(alpha, rng);
        total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
}

// Largest-remainder rounding of count*p onto integer buckets.
inline std::vector<std::size_t> apportion(std::size_t count, const std::vector<double>& p) {
    std::vector<std::size_t> out(p.size(), 0);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double exact = static_cast<double>(count) * p[i];
        out[i] = static_cast<std::size_t>(exact);
        assigned += out[i];
        remainders.emplace_back(exact - static_cast<double>(out[i]), i);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t i = 0; assigned < count; ++i, ++assigned) out[remainders[i].second] += 1;
    return out;
}

}  // namespace detail

// Splits samples (given by class label per index) into per-device shards.
// IID mode deals samples class by class round-robin; Dirichlet mode draws a
// per-class device distribution. Empty shards are repaired by a bounded
// number of re-draws, then a round-robin top-up from the largest shards.
inline std::vector<DeviceShard> partition(const std::vector<std::uint32_t>& labels,
                                          const PartitionSpec& spec) {
    spec.validate();
    if (labels.empty()) throw std::invalid_argument("partition: empty dataset");
    if (labels.size() < spec.num_devices)
        throw std::invalid_argument("partition: fewer samples (" +
                                    std::to_string(labels.size()) + ") than devices (" +
                                    std::to_string(spec.num_devices) + ")");
    const std::uint32_t num_classes = 1 + *std::max_element(labels.begin(), labels.end());
    std::vector<std::vector<std::uint64_t>> by_class(num_classes);
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);

    auto build = [&](std::uint64_t seed) {
        std::vector<DeviceShard> shards(spec.num_devices);
        for (std::uint32_t d = 0; d < spec.num_devices; ++d) {
            shards[d].device_id = d;
            shards[d].class_histogram.assign(num_classes, 0);
        }
        if (spec.mode == PartitionMode::kIid) {
            std::size_t cursor = 0;  // carried across classes for exact balance
            for (std::uint32_t c = 0; c < num_classes; ++c)
                for (std::uint64_t idx : by_class[c]) {
                    const std::uint32_t dev = cursor++ % spec.num_devices;
                    shards[dev].sample_indices.push_back(idx);
                    shards[dev].class_histogram[c] += 1;
                }
        } else {
            Rng rng(seed);
            for (std::uint32_t c = 0; c < num_classes; ++c) {
                const auto props = detail::dirichlet_draw(spec.alpha, spec.num_devices, rng);
                const auto counts = detail::apportion(by_class[c].size(), props);
                std::size_t offset = 0;
                for (std::uint32_t d = 0; d < spec.num_devices; ++d) {
                    for (std::size_t i = 0; i < counts[d]; ++i) {
                        shards[d].sample_indices.push_back(by_class[c][offset + i]);
                        shards[d].class_histogram[c] += 1;
                    }
                    offset += counts[d];
                }
            }
        }
        return shards;
    };

    constexpr int kMaxRedraws = 10;
    std::vector<DeviceShard> shards;
    for (int attempt = 0; attempt <= kMaxRedraws; ++attempt) {
        shards = build(derive_seed(spec.seed, static_cast<std::uint64_t>(attempt)));
        const bool any_empty = std::any_of(shards.begin(), shards.end(),
                                           [](const DeviceShard& s) {
                                               return s.sample_indices.empty();
                                           });
        if (!any_empty || spec.mode == PartitionMode::kIid) break;
    }
    // Round-robin top-up: move one sample from the currently largest shard
    // into each still-empty shard.
    for (DeviceShard& empty : shards) {
        if (!empty.sample_indices.empty()) continue;
        auto largest = std::max_element(shards.begin(), shards.end(),
                                        [](const DeviceShard& a, const DeviceShard& b) {
                                            return a.sample_indices.size() <
                                                   b.sample_indices.size();
                                        });
        const std::uint64_t moved = largest->sample_indices.back();
        largest->sample_indices.pop_back();
        largest->class_histogram[labels[moved]] -= 1;
        empty.sample_indices.push_back(moved);
        empty.class_histogram[labels[moved]] += 1;
    }
    return shards;
}

// One pooled sample reference: id plus the index of where its payload lives.
struct PooledSample {
    std::uint64_t sample_id = 0;
    std::uint32_t source_device = 0;
    std::size_t source_batch = 0;
    std::size_t source_row = 0;
};

// Canonical shuffle of pooled samples: sort by global sample id, then apply
// the seeded Fisher-Yates permutation. Duplicate ids are rejected because
// they would make the canonical order ambiguous.
inline std::vector<PooledSample> pooled_shuffle(std::vector<PooledSample> samples,
                                                std::uint64_t seed) {
    std::sort(samples.begin(), samples.end(),
              [](const PooledSample& a, const PooledSample& b) {
                  return a.sample_id < b.sample_id;
              });
    for (std::size_t i = 1; i < samples.size(); ++i)
        if (samples[i].sample_id == samples[i - 1].sample_id)
            throw std::invalid_argument("pooled_shuffle: duplicate sample id " +
                                        std::to_string(samples[i].sample_id));
    Rng rng(seed);
    rng.shuffle(samples);
    return samples;
}

// Convenience overload used by tests and the scheduler-free training loop:
// shuffles bare sample ids.
inline std::vector<std::uint64_t> pooled_shuffle_ids(std::vector<std::uint64_t> ids,
                                                     std::uint64_t seed) {
    std::vector<PooledSample> wrapped(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) wrapped[i].sample_id = ids[i];
    wrapped = pooled_shuffle(std::move(wrapped), seed);
    std::vector<std::uint64_t> out(wrapped.size());
    for (std::size_t i = 0; i < wrapped.size(); ++i) out[i] = wrapped[i].sample_id;
    return out;
}

// Audit manifest: one `device_id,sample_id` line per sample, devices then
// samples in ascending order.
inline std::string shard_manifest_csv(const std::vector<DeviceShard>& shards) {
    std::ostringstream out;
    out << "device_id,sample_id\n";
    for (const DeviceShard& shard : shards) {
        std::vector<std::uint64_t> sorted = shard.sample_indices;
        std::sort(sorted.begin(), sorted.end());
        for (std::uint64_t idx : sorted) out << shard.device_id << "," << idx << "\n";
    }
    return out.str();
}

}  // namespace splitfrozen
