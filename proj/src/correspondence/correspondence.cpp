#include "lumisplit/correspondence.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <nlohmann/json.hpp>
#include <numeric>
#include <random>

namespace lumisplit::correspondence {

using nlohmann::json;

std::string source_name(Source s) {
    switch (s) {
        case Source::Oracle: return "oracle";
        case Source::External: return "external";
        case Source::Perturbed: return "perturbed";
        case Source::Reduced: return "reduced";
    }
    return "unknown";
}

CorrespondenceSet CorrespondenceSet::swapped() const {
    CorrespondenceSet out = *this;
    std::swap(out.t1, out.t2);
    for (auto& m : out.matches) {
        std::swap(m.x1, m.x2);
        std::swap(m.y1, m.y2);
    }
    return out;
}

CorrespondenceSet correspondences_from_flow(const data::FlowField& flow, int stride, int t1, int t2) {
    if (stride < 1) throw InvalidArgument("correspondences_from_flow: stride must be >= 1");
    if (t1 == t2) throw InvalidArgument("correspondences_from_flow: t1 must differ from t2");
    CorrespondenceSet set;
    set.t1 = t1;
    set.t2 = t2;
    set.height = flow.height;
    set.width = flow.width;
    set.source = Source::Oracle;
    const float max_x = static_cast<float>(flow.width - 1);
    const float max_y = static_cast<float>(flow.height - 1);
    for (int y = 0; y < flow.height; y += stride) {
        for (int x = 0; x < flow.width; x += stride) {
            const std::size_t i = flow.index(y, x);
            if (!flow.valid[i]) continue;
            Correspondence m;
            m.x1 = static_cast<float>(x);
            m.y1 = static_cast<float>(y);
            // valid_mask admits a tiny round-off slack at the border.
            m.x2 = std::clamp(static_cast<float>(x) + flow.dx[i], 0.0f, max_x);
            m.y2 = std::clamp(static_cast<float>(y) + flow.dy[i], 0.0f, max_y);
            m.weight = 1.0f;
            set.matches.push_back(m);
        }
    }
    if (set.matches.empty())
        throw DataError("correspondences_from_flow: flow " + std::to_string(t1) + "->" + std::to_string(t2) +
                        " has no valid pixels on the sampling grid");
    return set;
}

CorrespondenceSet oracle_for_pair(const std::vector<data::FlowField>& consecutive, int stride, int t1, int t2) {
    if (t1 == t2) throw InvalidArgument("oracle_for_pair: t1 must differ from t2");
    if (t1 < t2) return correspondences_from_flow(data::flow_between(consecutive, t1, t2), stride, t1, t2);
    return correspondences_from_flow(data::flow_between(consecutive, t2, t1), stride, t2, t1).swapped();
}

namespace {

bool in_frame(float x, float y, int h, int w) {
    return std::isfinite(x) && std::isfinite(y) && x >= 0.0f && y >= 0.0f && x <= static_cast<float>(w - 1) &&
           y <= static_cast<float>(h - 1);
}

}  // namespace

std::vector<CorrespondenceSet> load_external_file(const std::filesystem::path& path, int height, int width,
                                                  LoadReport* report) {
    std::ifstream is(path);
    if (!is) throw DataError("cannot open correspondence file '" + path.string() + "'");
    LoadReport local;
    LoadReport& rep = report ? *report : local;
    rep = LoadReport{};

    std::map<std::pair<int, int>, CorrespondenceSet> by_pair;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        ++rep.lines;
        int t1 = 0, t2 = 0;
        Correspondence m;
        try {
            const json row = json::parse(line);
            t1 = row.at("t1").get<int>();
            t2 = row.at("t2").get<int>();
            m.x1 = row.at("x1").get<float>();
            m.y1 = row.at("y1").get<float>();
            m.x2 = row.at("x2").get<float>();
            m.y2 = row.at("y2").get<float>();
            m.weight = row.at("u").get<float>();
        } catch (const json::exception& e) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed correspondence line: " + e.what());
        }
        if (t1 == t2 || t1 < 0 || t2 < 0)
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": invalid frame indices");
        if (!std::isfinite(m.weight))
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": non-finite weight");
        if (!in_frame(m.x1, m.y1, height, width) || !in_frame(m.x2, m.y2, height, width)) {
            ++rep.dropped_out_of_bounds;
            continue;
        }
        if (m.weight < 0.0f || m.weight > 1.0f) {
            m.weight = std::clamp(m.weight, 0.0f, 1.0f);
            ++rep.clamped_weights;
        }
        auto& set = by_pair[{t1, t2}];
        set.t1 = t1;
        set.t2 = t2;
        set.height = height;
        set.width = width;
        set.source = Source::External;
        set.matches.push_back(m);
        ++rep.kept;
    }
    rep.empty_file = rep.lines == 0;
    if (rep.empty_file) spdlog::warn("correspondence file '{}' is empty", path.string());
    if (rep.dropped_out_of_bounds)
        spdlog::warn("correspondence file '{}': dropped {} out-of-bounds rows", path.string(), rep.dropped_out_of_bounds);
    std::vector<CorrespondenceSet> out;
    for (auto& [key, set] : by_pair) out.push_back(std::move(set));
    return out;
}

CorrespondenceSet load_external(const std::filesystem::path& path, int height, int width, LoadReport* report) {
    const auto sets = load_external_file(path, height, width, report);
    if (sets.empty()) {
        CorrespondenceSet empty;
        empty.height = height;
        empty.width = width;
        empty.source = Source::External;
        return empty;
    }
    return select_pair(sets, sets.front().t1, sets.front().t2, height, width);
}

CorrespondenceSet select_pair(const std::vector<CorrespondenceSet>& sets, int t1, int t2, int height, int width) {
    CorrespondenceSet out;
    out.t1 = t1;
    out.t2 = t2;
    out.height = height;
    out.width = width;
    out.source = Source::External;
    for (const auto& s : sets) {
        if (s.t1 == t1 && s.t2 == t2) {
            out.matches.insert(out.matches.end(), s.matches.begin(), s.matches.end());
        } else if (s.t1 == t2 && s.t2 == t1) {
            const auto sw = s.swapped();
            out.matches.insert(out.matches.end(), sw.matches.begin(), sw.matches.end());
        }
    }
    return out;
}

void save_external(const std::filesystem::path& path, const std::vector<CorrespondenceSet>& sets) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw DataError("cannot write correspondence file '" + path.string() + "'");
    for (const auto& s : sets) {
        for (const auto& m : s.matches) {
            json row = {{"t1", s.t1}, {"t2", s.t2}, {"x1", m.x1}, {"y1", m.y1},
                        {"x2", m.x2}, {"y2", m.y2}, {"u", m.weight}};
            os << row.dump() << '\n';
        }
    }
}

CorrespondenceSet perturb(const CorrespondenceSet& set, double max_offset_px, std::uint64_t rng_seed) {
    if (!(max_offset_px >= 0.0)) throw InvalidArgument("perturb: max_offset_px must be >= 0");
    CorrespondenceSet out = set;
    out.source = Source::Perturbed;
    if (max_offset_px == 0.0) return out;
    std::mt19937_64 rng(rng_seed);
    std::uniform_real_distribution<double> offset(-max_offset_px, max_offset_px);
    const double max_x = set.width - 1;
    const double max_y = set.height - 1;
    for (auto& m : out.matches) {
        const double ox = offset(rng);
        const double oy = offset(rng);
        m.x2 = static_cast<float>(std::clamp(m.x2 + ox, 0.0, max_x));
        m.y2 = static_cast<float>(std::clamp(m.y2 + oy, 0.0, max_y));
    }
    return out;
}

CorrespondenceSet reduce(const CorrespondenceSet& set, double keep_fraction, std::uint64_t rng_seed) {
    if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
        throw InvalidArgument("reduce: keep_fraction must be in (0, 1]");
    CorrespondenceSet out = set;
    out.source = Source::Reduced;
    const std::size_t m = set.matches.size();
    // The epsilon keeps e.g. 0.1 * 100 from rounding up to 11.
    const auto keep = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(m) - 1e-9));
    if (keep >= m) return out;
    std::vector<std::size_t> idx(m);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::mt19937_64 rng(rng_seed);
    // Partial Fisher-Yates: the first `keep` slots are a uniform sample.
    for (std::size_t i = 0; i < keep; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, m - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    out.matches.clear();
    for (auto i : idx) out.matches.push_back(set.matches[i]);
    return out;
}

CorrespondenceSet crop(const CorrespondenceSet& set, int x0, int y0, int height, int width) {
    CorrespondenceSet out = set;
    out.height = height;
    out.width = width;
    out.matches.clear();
    for (auto m : set.matches) {
        m.x1 -= static_cast<float>(x0);
        m.x2 -= static_cast<float>(x0);
        m.y1 -= static_cast<float>(y0);
        m.y2 -= static_cast<float>(y0);
        if (in_frame(m.x1, m.y1, height, width) && in_frame(m.x2, m.y2, height, width)) out.matches.push_back(m);
    }
    return out;
}

double endpoint_mean_abs_error(const Frame& a, const Frame& b, const CorrespondenceSet& set) {
    require_same_shape(a, b, "endpoint_mean_abs_error");
    if (set.empty()) throw InvalidArgument("endpoint_mean_abs_error: empty correspondence set");
    double sum = 0.0;
    for (const auto& m : set.matches) {
        double d = 0.0;
        for (int c = 0; c < a.channels(); ++c)
            d += std::abs(static_cast<double>(sample_bilinear(a, c, m.x1, m.y1)) -
                          static_cast<double>(sample_bilinear(b, c, m.x2, m.y2)));
        sum += d / a.channels();
    }
    return sum / static_cast<double>(set.size());
}

}  // namespace lumisplit::correspondence
