#pragma once

// Schedule export: JSON event lists (round-trippable) and self-contained SVG
// Gantt charts, one lane per resource, colored by event kind. All numeric
// formatting is fixed so identical schedules serialize byte-identically.

#include <algorithm>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "splitfrozen/scheduler.hpp"

namespace splitfrozen {

inline std::string format_seconds(double v) {
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.9g", v);
    return buffer;
}

inline nlohmann::ordered_json schedule_to_json(const PipelineSchedule& s) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["makespan_s"] = s.makespan;
    nlohmann::ordered_json resources = nlohmann::ordered_json::object();
    for (const auto& [resource, stats] : s.per_resource) {
        nlohmann::ordered_json r;
        r["busy_s"] = stats.busy;
        r["bubble_s"] = stats.bubble;
        r["first_start_s"] = stats.first_start;
        r["last_end_s"] = stats.last_end;
        resources[resource.name()] = r;
    }
    j["resources"] = resources;
    nlohmann::ordered_json events = nlohmann::ordered_json::array();
    for (const ScheduleEvent& e : s.events) {
        nlohmann::ordered_json ev;
        ev["kind"] = event_kind_name(e.kind);
        ev["resource"] = e.resource.name();
        ev["microbatch"] = e.microbatch_id;
        ev["device"] = e.device_id;
        ev["start_s"] = e.start;
        ev["duration_s"] = e.duration;
        events.push_back(ev);
    }
    j["events"] = events;
    return j;
}

inline EventKind event_kind_from_name(const std::string& name) {
    if (name == "F") return EventKind::kDeviceForward;
    if (name == "X") return EventKind::kTransmit;
    if (name == "AF") return EventKind::kAdditionalForward;
    if (name == "SF") return EventKind::kSharedForward;
    if (name == "B") return EventKind::kGradCompute;
    if (name == "W") return EventKind::kWeightUpdate;
    if (name == "Sync") return EventKind::kSync;
    throw std::invalid_argument("unknown event kind '" + name + "'");
}

inline Resource resource_from_name(const std::string& name) {
    if (name == "channel") return {ResourceType::kChannel, 0};
    if (name == "server") return {ResourceType::kServer, 0};
    if (name.starts_with("device:"))
        return {ResourceType::kDevice,
                static_cast<std::uint32_t>(std::stoul(name.substr(7)))};
    throw std::invalid_argument("unknown resource '" + name + "'");
}

inline PipelineSchedule schedule_from_json(const nlohmann::json& j) {
    PipelineSchedule s;
    for (const auto& ev : j.at("events")) {
        ScheduleEvent e;
        e.kind = event_kind_from_name(ev.at("kind").get<std::string>());
        e.resource = resource_from_name(ev.at("resource").get<std::string>());
        e.microbatch_id = ev.at("microbatch").get<std::int64_t>();
        e.device_id = ev.at("device").get<std::uint32_t>();
        e.start = ev.at("start_s").get<double>();
        e.duration = ev.at("duration_s").get<double>();
        s.events.push_back(e);
    }
    recompute_derived(s);
    return s;
}

inline const char* event_kind_color(EventKind k) {
    switch (k) {
        case EventKind::kDeviceForward: return "#4878cf";
        case EventKind::kTransmit: return "#ee854a";
        case EventKind::kAdditionalForward: return "#2ca089";
        case EventKind::kSharedForward: return "#6acc65";
        case EventKind::kGradCompute: return "#d65f5f";
        case EventKind::kWeightUpdate: return "#956cb4";
        case EventKind::kSync: return "#8c8c8c";
    }
    return "#000000";
}

// One lane per resource (devices ascending, then channel, then server), a
// light time grid, and a kind legend. Output contains no timestamps; the
// same schedule always renders to the same bytes.
inline std::string render_gantt_svg(const PipelineSchedule& s, const std::string& title) {
    constexpr double kLaneHeight = 26.0;
    constexpr double kLaneGap = 6.0;
    constexpr double kLeftMargin = 110.0;
    constexpr double kTopMargin = 58.0;
    constexpr double kPlotWidth = 980.0;

    std::vector<Resource> lanes;
    for (const auto& [resource, stats] : s.per_resource) lanes.push_back(resource);
    std::sort(lanes.begin(), lanes.end(), [](const Resource& a, const Resource& b) {
        if (a.type != b.type) return static_cast<int>(a.type) < static_cast<int>(b.type);
        return a.index < b.index;
    });
    std::map<Resource, std::size_t> lane_index;
    for (std::size_t i = 0; i < lanes.size(); ++i) lane_index[lanes[i]] = i;

    const double span = s.makespan > 0.0 ? s.makespan : 1.0;
    const double height = kTopMargin + lanes.size() * (kLaneHeight + kLaneGap) + 46.0;
    const double width = kLeftMargin + kPlotWidth + 30.0;

    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << format_seconds(width)
        << "\" height=\"" << format_seconds(height) << "\" viewBox=\"0 0 "
        << format_seconds(width) << " " << format_seconds(height) << "\">\n";
    svg << "<style>text{font-family:monospace;font-size:11px;}</style>\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<text x=\"" << format_seconds(kLeftMargin) << "\" y=\"18\" font-size=\"14\">"
        << title << "</text>\n";

    // Legend.
    double legend_x = kLeftMargin;
    for (EventKind kind : {EventKind::kDeviceForward, EventKind::kTransmit,
                           EventKind::kAdditionalForward, EventKind::kSharedForward,
                           EventKind::kGradCompute, EventKind::kWeightUpdate,
                           EventKind::kSync}) {
        svg << "<rect x=\"" << format_seconds(legend_x) << "\" y=\"26\" width=\"12\" "
            << "height=\"12\" fill=\"" << event_kind_color(kind) << "\"/>\n";
        svg << "<text x=\"" << format_seconds(legend_x + 16.0) << "\" y=\"36\">"
            << event_kind_name(kind) << "</text>\n";
        legend_x += 58.0;
    }

    // Time grid: five ticks.
    for (int tick = 0; tick <= 5; ++tick) {
        const double t = span * tick / 5.0;
        const double x = kLeftMargin + kPlotWidth * tick / 5.0;
        svg << "<line x1=\"" << format_seconds(x) << "\" y1=\"" << format_seconds(kTopMargin - 6.0)
            << "\" x2=\"" << format_seconds(x) << "\" y2=\""
            << format_seconds(height - 40.0) << "\" stroke=\"#dddddd\"/>\n";
        svg << "<text x=\"" << format_seconds(x) << "\" y=\"" << format_seconds(height - 26.0)
            << "\" text-anchor=\"middle\">" << format_seconds(t) << "s</text>\n";
    }

    for (std::size_t i = 0; i < lanes.size(); ++i) {
        const double y = kTopMargin + i * (kLaneHeight + kLaneGap);
        svg << "<text x=\"8\" y=\"" << format_seconds(y + kLaneHeight * 0.7) << "\">"
            << lanes[i].name() << "</text>\n";
    }
    for (const ScheduleEvent& e : s.events) {
        const double y = kTopMargin + lane_index.at(e.resource) * (kLaneHeight + kLaneGap);
        const double x = kLeftMargin + kPlotWidth * e.start / span;
        const double w = std::max(kPlotWidth * e.duration / span, 0.25);
        svg << "<rect x=\"" << format_seconds(x) << "\" y=\"" << format_seconds(y)
            << "\" width=\"" << format_seconds(w) << "\" height=\""
            << format_seconds(kLaneHeight) << "\" fill=\"" << event_kind_color(e.kind)
            << "\" stroke=\"#333333\" stroke-width=\"0.3\"><title>"
            << event_kind_name(e.kind) << " mb=" << e.microbatch_id << " dev=" << e.device_id
            << " [" << format_seconds(e.start) << ", " << format_seconds(e.end())
            << ")</title></rect>\n";
    }
    svg << "<text x=\"" << format_seconds(kLeftMargin) << "\" y=\""
        << format_seconds(height - 10.0) << "\">makespan " << format_seconds(s.makespan)
        << " s (simulated)</text>\n";
    svg << "</svg>\n";
    return svg.str();
}

}  // namespace splitfrozen
