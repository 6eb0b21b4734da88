#pragma once

// Heterogeneity-aware layer allocation and deterministic discrete-event
// pipeline simulation, plus schedule models of the comparison schemes.
//
// Resources: one lane per device, one shared FIFO channel, one server lane.
// Event kinds follow the per-microbatch chain F -> X -> AF -> SF -> B -> W.
// The split-backward simulator applies the server priority AF > SF > B and
// fills otherwise-idle server time with pending W events (a W is placed in a
// gap only when it finishes before the next known arrival, so deferring W
// never delays gradient work); leftover W events drain at the end.
//
// Comparison schemes:
//   cenlora    everything trains on the server machine, no network
//   fedlora    every device fine-tunes the full model locally, one adapter
//              sync (up+down) per device per round over the shared channel
//   splitlora  every device fine-tunes a fixed cut, exchanges activations
//              and gradients both ways per microbatch, and syncs its
//              device-side adapters at round end

#include <algorithm>
#include <cstdint>
#include <deque>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "splitfrozen/costmodel.hpp"

namespace splitfrozen {

struct ClusterSpec {
    std::vector<DeviceProfile> devices;
    ChannelProfile channel;
    ServerProfile server;
    ModelProfile model;
    WorkloadSpec workload;
    double utilization = 1.0;

    void validate() const {
        if (devices.empty()) throw std::invalid_argument("ClusterSpec: need >= 1 device");
        if (!(utilization > 0.0) || utilization > 1.0)
            throw std::invalid_argument("ClusterSpec: utilization must be in (0, 1]");
        for (const DeviceProfile& d : devices)
            if (d.peak_flops <= 0.0)
                throw std::invalid_argument("ClusterSpec: device peak_flops must be positive");
        if (server.peak_flops <= 0.0)
            throw std::invalid_argument("ClusterSpec: server peak_flops must be positive");
        channel.validate();
        model.validate();
    }
};

enum class EventKind : std::uint8_t {
    kDeviceForward,     // F
    kTransmit,          // X
    kAdditionalForward, // AF
    kSharedForward,     // SF
    kGradCompute,       // B
    kWeightUpdate,      // W
    kSync,
};

inline const char* event_kind_name(EventKind k) {
    switch (k) {
        case EventKind::kDeviceForward: return "F";
        case EventKind::kTransmit: return "X";
        case EventKind::kAdditionalForward: return "AF";
        case EventKind::kSharedForward: return "SF";
        case EventKind::kGradCompute: return "B";
        case EventKind::kWeightUpdate: return "W";
        case EventKind::kSync: return "Sync";
    }
    return "?";
}

enum class ResourceType : std::uint8_t { kDevice, kChannel, kServer };

struct Resource {
    ResourceType type = ResourceType::kServer;
    std::uint32_t index = 0;  // device id for kDevice

    auto operator<=>(const Resource&) const = default;

    std::string name() const {
        switch (type) {
            case ResourceType::kDevice: return "device:" + std::to_string(index);
            case ResourceType::kChannel: return "channel";
            case ResourceType::kServer: return "server";
        }
        return "?";
    }
};

struct ScheduleEvent {
    EventKind kind = EventKind::kDeviceForward;
    Resource resource;
    std::int64_t microbatch_id = -1;  // -1 for Sync
    std::uint32_t device_id = 0;      // originating device
    double start = 0.0;
    double duration = 0.0;

    double end() const { return start + duration; }
};

struct ResourceStats {
    double first_start = 0.0;
    double last_end = 0.0;
    double busy = 0.0;
    double bubble = 0.0;  // (last_end - first_start) - busy
};

struct PipelineSchedule {
    std::vector<ScheduleEvent> events;
    double makespan = 0.0;
    std::map<Resource, ResourceStats> per_resource;
};

// Rebuilds makespan and per-resource stats from the event list; calling it
// again on its own output changes nothing.
inline void recompute_derived(PipelineSchedule& s) {
    s.makespan = 0.0;
    s.per_resource.clear();
    for (const ScheduleEvent& e : s.events) {
        s.makespan = std::max(s.makespan, e.end());
        auto [it, fresh] = s.per_resource.try_emplace(e.resource);
        ResourceStats& stats = it->second;
        if (fresh) {
            stats.first_start = e.start;
            stats.last_end = e.end();
        } else {
            stats.first_start = std::min(stats.first_start, e.start);
            stats.last_end = std::max(stats.last_end, e.end());
        }
        stats.busy += e.duration;
    }
    for (auto& [resource, stats] : s.per_resource)
        stats.bubble = (stats.last_end - stats.first_start) - stats.busy;
}

struct ScheduleViolation {
    std::string message;
};

// Checks resource exclusivity, non-negative durations, and the
// per-microbatch precedence chain (B-before-W is scoped per resource, since
// split schemes run backward phases on both sides). Sync events only take
// part in the overlap check.
inline std::vector<ScheduleViolation> validate_schedule(const PipelineSchedule& s) {
    constexpr double kTol = 1e-9;
    std::vector<ScheduleViolation> out;

    for (const ScheduleEvent& e : s.events)
        if (e.duration < 0.0)
            out.push_back({"negative duration: " + std::string(event_kind_name(e.kind)) +
                           " mb " + std::to_string(e.microbatch_id)});

    std::map<Resource, std::vector<const ScheduleEvent*>> by_resource;
    for (const ScheduleEvent& e : s.events) by_resource[e.resource].push_back(&e);
    for (auto& [resource, events] : by_resource) {
        std::sort(events.begin(), events.end(), [](const auto* a, const auto* b) {
            return a->start < b->start;
        });
        for (std::size_t i = 1; i < events.size(); ++i)
            if (events[i]->start < events[i - 1]->end() - kTol)
                out.push_back({"overlap on " + resource.name() + ": " +
                               event_kind_name(events[i - 1]->kind) + " mb " +
                               std::to_string(events[i - 1]->microbatch_id) + " [" +
                               std::to_string(events[i - 1]->start) + ", " +
                               std::to_string(events[i - 1]->end()) + ") and " +
                               event_kind_name(events[i]->kind) + " mb " +
                               std::to_string(events[i]->microbatch_id) + " starting " +
                               std::to_string(events[i]->start)});
    }

    std::map<std::int64_t, std::vector<const ScheduleEvent*>> by_mb;
    for (const ScheduleEvent& e : s.events)
        if (e.kind != EventKind::kSync && e.microbatch_id >= 0)
            by_mb[e.microbatch_id].push_back(&e);

    for (auto& [mb, events] : by_mb) {
        auto first_of = [&](EventKind kind) -> const ScheduleEvent* {
            const ScheduleEvent* found = nullptr;
            for (const auto* e : events)
                if (e->kind == kind && (!found || e->start < found->start)) found = e;
            return found;
        };
        const auto* f = first_of(EventKind::kDeviceForward);
        const auto* x = first_of(EventKind::kTransmit);
        const auto* af = first_of(EventKind::kAdditionalForward);
        const auto* sf = first_of(EventKind::kSharedForward);
        auto require_order = [&](const ScheduleEvent* a, const ScheduleEvent* b,
                                 const char* what) {
            if (a && b && b->start < a->end() - kTol)
                out.push_back({"mb " + std::to_string(mb) + ": " + what + " (" +
                               event_kind_name(b->kind) + " starts " +
                               std::to_string(b->start) + " before " +
                               event_kind_name(a->kind) + " ends " +
                               std::to_string(a->end()) + ")"});
        };
        require_order(f, x, "transmit before device forward finished");
        if (x) {
            const ScheduleEvent* first_server = af ? af : sf;
            require_order(x, first_server, "server work before first transmit finished");
        }
        require_order(af, sf, "shared forward before additional forward finished");
        if (sf)
            for (const auto* e : events)
                if (e->kind == EventKind::kGradCompute)
                    require_order(sf, e, "gradient compute before shared forward finished");
        // B before W, per resource.
        for (const auto* w : events) {
            if (w->kind != EventKind::kWeightUpdate) continue;
            for (const auto* b : events)
                if (b->kind == EventKind::kGradCompute && b->resource == w->resource)
                    require_order(b, w, "weight update before gradient compute finished");
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Layer allocation
// ---------------------------------------------------------------------------

struct AllocationBounds {
    std::uint32_t min_layers = 1;
    std::uint32_t max_layers = 0;  // 0: derive num_layers/4 (at least min)
};

// Deepest admissible prefix goes to the most capable devices; every other
// device gets the depth whose forward+transmit stage time sits closest to
// that anchor timeline, ties resolved toward fewer layers. Reproduces the
// reference fleet split {1,3} for the 10%/20% capacity tiers and keeps
// allocation monotone in capacity.
inline std::vector<std::uint32_t> allocate_layers(const ClusterSpec& cluster,
                                                  AllocationBounds bounds = {}) {
    cluster.validate();
    std::uint32_t max_layers = bounds.max_layers;
    if (max_layers == 0)
        max_layers = std::max(bounds.min_layers, cluster.model.num_layers / 4);
    if (bounds.min_layers > max_layers || max_layers > cluster.model.num_layers)
        throw std::invalid_argument("allocate_layers: infeasible bounds [" +
                                    std::to_string(bounds.min_layers) + ", " +
                                    std::to_string(max_layers) + "] for " +
                                    std::to_string(cluster.model.num_layers) + " layers");

    const double per_layer = forward_flops_per_layer(cluster.model, cluster.workload);
    const double act = activation_bytes(cluster.model, cluster.workload);
    auto device_stage_time = [&](std::uint32_t layers, const DeviceProfile& dev) {
        return stage_time(layers * per_layer, dev.peak_flops * cluster.utilization) +
               xmit_time(act, cluster.channel);
    };

    double cap_max = 0.0;
    for (const DeviceProfile& d : cluster.devices) cap_max = std::max(cap_max, d.peak_flops);
    DeviceProfile anchor_dev;
    anchor_dev.peak_flops = cap_max;
    const double anchor = device_stage_time(max_layers, anchor_dev);

    std::vector<std::uint32_t> out;
    out.reserve(cluster.devices.size());
    for (const DeviceProfile& dev : cluster.devices) {
        if (dev.peak_flops == cap_max) {
            out.push_back(max_layers);
            continue;
        }
        std::uint32_t best = bounds.min_layers;
        double best_mismatch = std::abs(device_stage_time(bounds.min_layers, dev) - anchor);
        for (std::uint32_t layers = bounds.min_layers + 1; layers <= max_layers; ++layers) {
            const double mismatch = std::abs(device_stage_time(layers, dev) - anchor);
            // Strict improvement beyond rounding noise required, so exact
            // ties keep the smaller depth.
            if (mismatch < best_mismatch * (1.0 - 1e-12)) {
                best = layers;
                best_mismatch = mismatch;
            }
        }
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage durations shared by the simulators
// ---------------------------------------------------------------------------

namespace sched_detail {

struct StageTimes {
    double fwd_layer = 0.0;       // base forward, one layer, one microbatch
    double lora_layer = 0.0;      // adapter forward, one layer, one microbatch
    double xmit = 0.0;            // one activation batch over the channel
    double server_capacity = 0.0;
    double adapter_param_bytes_per_layer = 0.0;
};

inline StageTimes stage_times(const ClusterSpec& c) {
    StageTimes t;
    const double fwd = forward_flops_per_layer(c.model, c.workload);
    const double lora = lora_flops_per_layer(c.model, c.workload);
    t.server_capacity = c.server.peak_flops * c.utilization;
    t.fwd_layer = fwd;
    t.lora_layer = lora;
    t.xmit = xmit_time(activation_bytes(c.model, c.workload), c.channel);
    // Adapter parameters per layer (Q,K,V,O), serialized as 32-bit floats.
    t.adapter_param_bytes_per_layer =
        kAdaptedProjectionsPerLayer * 2.0 * c.workload.lora_rank * c.model.hidden_dim * 4.0;
    return t;
}

inline double device_time(const ClusterSpec& c, std::size_t device, double flops) {
    return stage_time(flops, c.devices[device].peak_flops * c.utilization);
}

inline double server_time(const ClusterSpec& c, double flops) {
    return stage_time(flops, c.server.peak_flops * c.utilization);
}

}  // namespace sched_detail

struct SplitFrozenSimOptions {
    std::uint32_t num_microbatches = 1;  // per device
    bool split_backward = true;          // false: fused B+W events
    bool sequential = false;             // no-overlap schedule of the same events
};

// Pipelined simulation of the frozen-prefix scheme. Devices run forward
// back-to-back (transmission is buffered), the single channel serves
// transfers FIFO by readiness with device-id tie-break, and the server
// follows the AF > SF > B priority with W gap-filling.
inline PipelineSchedule simulate_splitfrozen(const ClusterSpec& cluster,
                                             const std::vector<std::uint32_t>& depths,
                                             const SplitFrozenSimOptions& options) {
    cluster.validate();
    if (depths.size() != cluster.devices.size())
        throw std::invalid_argument("simulate_splitfrozen: one depth per device required");
    const std::uint32_t num_devices = static_cast<std::uint32_t>(cluster.devices.size());
    const std::uint32_t M = options.num_microbatches;
    if (M == 0) throw std::invalid_argument("simulate_splitfrozen: need >= 1 microbatch");
    std::uint32_t shared_start = 0;
    for (std::uint32_t depth : depths) {
        if (depth > cluster.model.num_layers)
            throw std::invalid_argument("simulate_splitfrozen: depth exceeds model layers");
        shared_start = std::max(shared_start, depth);
    }
    const std::uint32_t shared_layers = cluster.model.num_layers - shared_start;

    const auto t = sched_detail::stage_times(cluster);
    auto mb_id = [&](std::uint32_t dev, std::uint32_t m) -> std::int64_t {
        return static_cast<std::int64_t>(dev) * M + m;
    };

    struct PerDevice {
        double f = 0.0;   // device forward per microbatch
        double af = 0.0;  // server catch-up per microbatch
    };
    std::vector<PerDevice> per(num_devices);
    for (std::uint32_t d = 0; d < num_devices; ++d) {
        per[d].f = sched_detail::device_time(cluster, d, depths[d] * t.fwd_layer);
        per[d].af = sched_detail::server_time(cluster, (shared_start - depths[d]) * t.fwd_layer);
    }
    const double sf = sched_detail::server_time(
        cluster, shared_layers * (t.fwd_layer + t.lora_layer));
    const double b = sched_detail::server_time(cluster, shared_layers * t.fwd_layer);
    const double w = sched_detail::server_time(cluster, 2.0 * shared_layers * t.lora_layer);

    PipelineSchedule s;

    if (options.sequential) {
        double cursor = 0.0;
        auto emit = [&](EventKind kind, Resource r, std::int64_t mb, std::uint32_t dev,
                        double duration) {
            s.events.push_back({kind, r, mb, dev, cursor, duration});
            cursor += duration;
        };
        for (std::uint32_t d = 0; d < num_devices; ++d)
            for (std::uint32_t m = 0; m < M; ++m) {
                const std::int64_t id = mb_id(d, m);
                emit(EventKind::kDeviceForward, {ResourceType::kDevice, d}, id, d, per[d].f);
                emit(EventKind::kTransmit, {ResourceType::kChannel, 0}, id, d, t.xmit);
                if (per[d].af > 0.0)
                    emit(EventKind::kAdditionalForward, {ResourceType::kServer, 0}, id, d,
                         per[d].af);
                emit(EventKind::kSharedForward, {ResourceType::kServer, 0}, id, d, sf);
                if (options.split_backward) {
                    emit(EventKind::kGradCompute, {ResourceType::kServer, 0}, id, d, b);
                    emit(EventKind::kWeightUpdate, {ResourceType::kServer, 0}, id, d, w);
                } else {
                    emit(EventKind::kGradCompute, {ResourceType::kServer, 0}, id, d, b + w);
                }
            }
        recompute_derived(s);
        return s;
    }

    // Device lanes: F back-to-back from t = 0.
    for (std::uint32_t d = 0; d < num_devices; ++d)
        for (std::uint32_t m = 0; m < M; ++m)
            s.events.push_back({EventKind::kDeviceForward, {ResourceType::kDevice, d},
                                mb_id(d, m), d, m * per[d].f, per[d].f});

    // Channel: FIFO by readiness, device id then microbatch as tie-break.
    struct Transfer {
        double ready;
        std::uint32_t dev;
        std::uint32_t m;
    };
    std::vector<Transfer> transfers;
    for (std::uint32_t d = 0; d < num_devices; ++d)
        for (std::uint32_t m = 0; m < M; ++m)
            transfers.push_back({(m + 1.0) * per[d].f, d, m});
    std::sort(transfers.begin(), transfers.end(), [](const Transfer& a, const Transfer& b) {
        if (a.ready != b.ready) return a.ready < b.ready;
        if (a.dev != b.dev) return a.dev < b.dev;
        return a.m < b.m;
    });
    struct ServerArrival {
        double release;
        std::uint32_t dev;
        std::uint32_t m;
    };
    std::vector<ServerArrival> arrivals;
    double channel_free = 0.0;
    for (const Transfer& x : transfers) {
        const double start = std::max(x.ready, channel_free);
        s.events.push_back({EventKind::kTransmit, {ResourceType::kChannel, 0},
                            mb_id(x.dev, x.m), x.dev, start, t.xmit});
        channel_free = start + t.xmit;
        arrivals.push_back({channel_free, x.dev, x.m});
    }

    // Server: per microbatch AF -> SF -> B (priority in that order, FIFO by
    // release within a kind), W fills gaps without delaying anything.
    struct ServerTask {
        EventKind kind;
        double release;
        std::uint32_t dev;
        std::uint32_t m;
    };
    auto task_before = [](const ServerTask& a, const ServerTask& b) {
        if (a.release != b.release) return a.release < b.release;
        if (a.dev != b.dev) return a.dev < b.dev;
        return a.m < b.m;
    };
    std::deque<ServerTask> af_q, sf_q, b_q, w_q;
    std::size_t next_arrival = 0;
    const Resource server{ResourceType::kServer, 0};
    double now = 0.0;
    std::size_t remaining = 0;
    for (const ServerArrival& a : arrivals)
        remaining += (per[a.dev].af > 0.0 ? 1 : 0) + 2 + (options.split_backward ? 1 : 0);

    auto push_sorted = [&](std::deque<ServerTask>& queue, ServerTask task) {
        auto it = std::upper_bound(queue.begin(), queue.end(), task, task_before);
        queue.insert(it, task);
    };
    auto admit_arrivals = [&](double up_to) {
        while (next_arrival < arrivals.size() && arrivals[next_arrival].release <= up_to) {
            const auto& a = arrivals[next_arrival++];
            const double af = per[a.dev].af;
            if (af > 0.0)
                push_sorted(af_q, {EventKind::kAdditionalForward, a.release, a.dev, a.m});
            else
                push_sorted(sf_q, {EventKind::kSharedForward, a.release, a.dev, a.m});
        }
    };

    while (remaining > 0) {
        admit_arrivals(now);
        ServerTask task{};
        bool have_task = false;
        if (!af_q.empty() && af_q.front().release <= now) {
            task = af_q.front();
            af_q.pop_front();
            have_task = true;
        } else if (!sf_q.empty() && sf_q.front().release <= now) {
            task = sf_q.front();
            sf_q.pop_front();
            have_task = true;
        } else if (!b_q.empty() && b_q.front().release <= now) {
            task = b_q.front();
            b_q.pop_front();
            have_task = true;
        }
        if (!have_task) {
            const double next_release =
                next_arrival < arrivals.size() ? arrivals[next_arrival].release
                                               : std::numeric_limits<double>::infinity();
            // Gap before the next arrival: place W events that fit entirely.
            while (!w_q.empty() && now + w <= next_release) {
                const ServerTask wt = w_q.front();
                w_q.pop_front();
                s.events.push_back({EventKind::kWeightUpdate, server, mb_id(wt.dev, wt.m),
                                    wt.dev, now, w});
                now += w;
                --remaining;
            }
            if (next_release == std::numeric_limits<double>::infinity()) {
                // Nothing left but deferred W work: drain it back-to-back.
                while (!w_q.empty()) {
                    const ServerTask wt = w_q.front();
                    w_q.pop_front();
                    s.events.push_back({EventKind::kWeightUpdate, server,
                                        mb_id(wt.dev, wt.m), wt.dev, now, w});
                    now += w;
                    --remaining;
                }
                break;
            }
            now = std::max(now, next_release);
            continue;
        }
        double duration = 0.0;
        EventKind emit_kind = task.kind;
        switch (task.kind) {
            case EventKind::kAdditionalForward:
                duration = per[task.dev].af;
                push_sorted(sf_q, {EventKind::kSharedForward, now + duration, task.dev, task.m});
                break;
            case EventKind::kSharedForward:
                duration = sf;
                push_sorted(b_q, {EventKind::kGradCompute, now + duration, task.dev, task.m});
                break;
            case EventKind::kGradCompute:
                duration = options.split_backward ? b : b + w;
                if (options.split_backward)
                    push_sorted(w_q, {EventKind::kWeightUpdate, now + duration, task.dev,
                                      task.m});
                break;
            default:
                throw std::logic_error("unexpected server task kind");
        }
        s.events.push_back({emit_kind, server, mb_id(task.dev, task.m), task.dev, now,
                            duration});
        now += duration;
        --remaining;
    }

    recompute_derived(s);
    return s;
}

enum class BaselineScheme { kCenLoRA, kFedLoRA, kSplitLoRA };

inline BaselineScheme baseline_scheme_from_name(const std::string& name) {
    if (name == "cenlora") return BaselineScheme::kCenLoRA;
    if (name == "fedlora") return BaselineScheme::kFedLoRA;
    if (name == "splitlora") return BaselineScheme::kSplitLoRA;
    throw std::invalid_argument("unknown scheme '" + name + "'");
}

struct BaselineResult {
    PipelineSchedule schedule;
    double device_flops_per_sample = 0.0;  // fleet view, see scheme notes
    double device_time = 0.0;              // busiest device lane (cenlora: the machine)
};

struct SplitLoRAOptions {
    std::uint32_t cut_layers = 3;
};

// Per-sample device-side FLOPs of each scheme, with batch size divided out.
inline double scheme_device_flops_per_sample(const ClusterSpec& c, const std::string& scheme,
                                             const std::vector<std::uint32_t>& depths,
                                             std::uint32_t splitlora_cut = 3) {
    WorkloadSpec per_sample = c.workload;
    per_sample.batch_size = 1;
    const double fwd = forward_flops_per_layer(c.model, per_sample);
    const double lora = lora_flops_per_layer(c.model, per_sample);
    const double L = c.model.num_layers;
    if (scheme == "cenlora" || scheme == "fedlora") {
        // Full-model adapter fine-tune: forward with adapters, input-gradient
        // pass, adapter weight updates.
        return L * (fwd + lora) + L * fwd + 2.0 * L * lora;
    }
    if (scheme == "splitlora") {
        const double cut = splitlora_cut;
        return cut * (fwd + lora) + cut * fwd + 2.0 * cut * lora;
    }
    if (scheme == "splitfrozen") {
        double total = 0.0;
        for (std::uint32_t depth : depths) total += depth * fwd;
        return total / static_cast<double>(depths.size());
    }
    throw std::invalid_argument("unknown scheme '" + scheme + "'");
}

inline BaselineResult simulate_baseline(const ClusterSpec& cluster, BaselineScheme scheme,
                                        std::uint32_t num_microbatches,
                                        SplitLoRAOptions splitlora = {}) {
    cluster.validate();
    if (num_microbatches == 0)
        throw std::invalid_argument("simulate_baseline: need >= 1 microbatch");
    const std::uint32_t num_devices = static_cast<std::uint32_t>(cluster.devices.size());
    const std::uint32_t M = num_microbatches;
    const auto t = sched_detail::stage_times(cluster);
    const double L = cluster.model.num_layers;
    BaselineResult result;
    PipelineSchedule& s = result.schedule;
    const Resource server{ResourceType::kServer, 0};
    const Resource channel{ResourceType::kChannel, 0};

    if (scheme == BaselineScheme::kCenLoRA) {
        // All data and all compute on the central machine; the machine plays
        // the "device" role in per-device reporting.
        const double fwd = sched_detail::server_time(cluster, L * (t.fwd_layer + t.lora_layer));
        const double bwd = sched_detail::server_time(cluster, L * t.fwd_layer);
        const double upd = sched_detail::server_time(cluster, 2.0 * L * t.lora_layer);
        double cursor = 0.0;
        for (std::uint32_t m = 0; m < M * num_devices; ++m) {
            s.events.push_back({EventKind::kSharedForward, server, m, 0, cursor, fwd});
            cursor += fwd;
            s.events.push_back({EventKind::kGradCompute, server, m, 0, cursor, bwd});
            cursor += bwd;
            s.events.push_back({EventKind::kWeightUpdate, server, m, 0, cursor, upd});
            cursor += upd;
        }
        recompute_derived(s);
        result.device_flops_per_sample =
            scheme_device_flops_per_sample(cluster, "cenlora", {});
        result.device_time = s.makespan;
        return result;
    }

    if (scheme == BaselineScheme::kFedLoRA) {
        // Local full-model fine-tuning on every device, then one adapter
        // sync (up + down) per device over the shared channel.
        std::vector<double> lane_end(num_devices, 0.0);
        for (std::uint32_t d = 0; d < num_devices; ++d) {
            const double fwd = sched_detail::device_time(
                cluster, d, L * (t.fwd_layer + t.lora_layer));
            const double bwd = sched_detail::device_time(cluster, d, L * t.fwd_layer);
            const double upd = sched_detail::device_time(cluster, d, 2.0 * L * t.lora_layer);
            double cursor = 0.0;
            for (std::uint32_t m = 0; m < M; ++m) {
                const std::int64_t id = static_cast<std::int64_t>(d) * M + m;
                const Resource dev{ResourceType::kDevice, d};
                s.events.push_back({EventKind::kDeviceForward, dev, id, d, cursor, fwd});
                cursor += fwd;
                s.events.push_back({EventKind::kGradCompute, dev, id, d, cursor, bwd});
                cursor += bwd;
                s.events.push_back({EventKind::kWeightUpdate, dev, id, d, cursor, upd});
                cursor += upd;
            }
            lane_end[d] = cursor;
        }
        // Sync transfers, FIFO by readiness.
        const double sync_bytes = 2.0 * L * t.adapter_param_bytes_per_layer;
        const double sync_time = xmit_time(sync_bytes, cluster.channel);
        std::vector<std::uint32_t> order(num_devices);
        for (std::uint32_t d = 0; d < num_devices; ++d) order[d] = d;
        std::sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
            if (lane_end[a] != lane_end[b]) return lane_end[a] < lane_end[b];
            return a < b;
        });
        double channel_free = 0.0;
        for (std::uint32_t d : order) {
            const double start = std::max(lane_end[d], channel_free);
            s.events.push_back({EventKind::kSync, channel, -1, d, start, sync_time});
            channel_free = start + sync_time;
        }
        recompute_derived(s);
        result.device_flops_per_sample =
            scheme_device_flops_per_sample(cluster, "fedlora", {});
        result.device_time = *std::max_element(lane_end.begin(), lane_end.end());
        return result;
    }

    // SplitLoRA: fixed cut on every device; each microbatch makes the round
    // trip device -> server -> device before the next one starts (device-side
    // weights must be updated before the next forward).
    const std::uint32_t cut = splitlora.cut_layers;
    if (cut > cluster.model.num_layers)
        throw std::invalid_argument("simulate_baseline: splitlora cut exceeds model layers");
    const double server_layers = L - cut;

    enum class Phase : std::uint8_t { kFwd, kUp, kServer, kDown, kBwd, kSync, kDone };
    struct DeviceState {
        Phase phase = Phase::kFwd;
        std::uint32_t m = 0;
        double ready = 0.0;
    };
    std::vector<DeviceState> dev_state(num_devices);
    std::vector<double> dev_fwd(num_devices), dev_b(num_devices), dev_w(num_devices);
    for (std::uint32_t d = 0; d < num_devices; ++d) {
        dev_fwd[d] = sched_detail::device_time(cluster, d, cut * (t.fwd_layer + t.lora_layer));
        dev_b[d] = sched_detail::device_time(cluster, d, cut * t.fwd_layer);
        dev_w[d] = sched_detail::device_time(cluster, d, 2.0 * cut * t.lora_layer);
    }
    const double srv_fwd = sched_detail::server_time(
        cluster, server_layers * (t.fwd_layer + t.lora_layer));
    const double srv_b = sched_detail::server_time(cluster, server_layers * t.fwd_layer);
    const double srv_w = sched_detail::server_time(cluster, 2.0 * server_layers * t.lora_layer);
    const double srv_block = srv_fwd + srv_b + srv_w;
    const double sync_time = xmit_time(2.0 * cut * t.adapter_param_bytes_per_layer,
                                       cluster.channel);
    double channel_free = 0.0, server_free = 0.0;
    std::vector<double> device_busy(num_devices, 0.0);

    // Greedy earliest-start commit loop; FIFO per resource emerges from the
    // (start, device, microbatch) ordering.
    std::uint32_t done = 0;
    while (done < num_devices) {
        double best_start = std::numeric_limits<double>::infinity();
        std::uint32_t best_dev = 0;
        for (std::uint32_t d = 0; d < num_devices; ++d) {
            const DeviceState& st = dev_state[d];
            if (st.phase == Phase::kDone) continue;
            double start = st.ready;
            switch (st.phase) {
                case Phase::kUp:
                case Phase::kDown:
                case Phase::kSync:
                    start = std::max(start, channel_free);
                    break;
                case Phase::kServer:
                    start = std::max(start, server_free);
                    break;
                default:
                    break;
            }
            if (start < best_start) {
                best_start = start;
                best_dev = d;
            }
        }
        DeviceState& st = dev_state[best_dev];
        const std::int64_t id = static_cast<std::int64_t>(best_dev) * M + st.m;
        const Resource dev{ResourceType::kDevice, best_dev};
        switch (st.phase) {
            case Phase::kFwd:
                s.events.push_back({EventKind::kDeviceForward, dev, id, best_dev, best_start,
                                    dev_fwd[best_dev]});
                device_busy[best_dev] += dev_fwd[best_dev];
                st.ready = best_start + dev_fwd[best_dev];
                st.phase = Phase::kUp;
                break;
            case Phase::kUp:
                s.events.push_back({EventKind::kTransmit, channel, id, best_dev, best_start,
                                    t.xmit});
                channel_free = best_start + t.xmit;
                st.ready = channel_free;
                st.phase = Phase::kServer;
                break;
            case Phase::kServer:
                // The server processes one microbatch's forward/backward/
                // update as a contiguous block, FIFO across devices.
                s.events.push_back({EventKind::kSharedForward, server, id, best_dev,
                                    best_start, srv_fwd});
                s.events.push_back({EventKind::kGradCompute, server, id, best_dev,
                                    best_start + srv_fwd, srv_b});
                s.events.push_back({EventKind::kWeightUpdate, server, id, best_dev,
                                    best_start + srv_fwd + srv_b, srv_w});
                server_free = best_start + srv_block;
                st.ready = server_free;
                st.phase = Phase::kDown;
                break;
            case Phase::kDown:
                s.events.push_back({EventKind::kTransmit, channel, id, best_dev, best_start,
                                    t.xmit});
                channel_free = best_start + t.xmit;
                st.ready = channel_free;
                st.phase = Phase::kBwd;
                break;
            case Phase::kBwd: {
                s.events.push_back({EventKind::kGradCompute, dev, id, best_dev, best_start,
                                    dev_b[best_dev]});
                s.events.push_back({EventKind::kWeightUpdate, dev, id, best_dev,
                                    best_start + dev_b[best_dev], dev_w[best_dev]});
                device_busy[best_dev] += dev_b[best_dev] + dev_w[best_dev];
                st.ready = best_start + dev_b[best_dev] + dev_w[best_dev];
                st.m += 1;
                st.phase = st.m < M ? Phase::kFwd : Phase::kSync;
                break;
            }
            case Phase::kSync:
                s.events.push_back({EventKind::kSync, channel, -1, best_dev, best_start,
                                    sync_time});
                channel_free = best_start + sync_time;
                st.phase = Phase::kDone;
                ++done;
                break;
            case Phase::kDone:
                break;
        }
    }
    recompute_derived(s);
    result.device_flops_per_sample = scheme_device_flops_per_sample(
        cluster, "splitlora", {}, splitlora.cut_layers);
    result.device_time = *std::max_element(device_busy.begin(), device_busy.end());
    return result;
}

}  // namespace splitfrozen
