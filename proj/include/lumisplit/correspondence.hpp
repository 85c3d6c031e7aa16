#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "lumisplit/data.hpp"

namespace lumisplit::correspondence {

/// A matched scene point: (x1, y1) in frame t1, (x2, y2) in frame t2, pixel
/// coordinates with the origin at the top-left. `weight` is a confidence in
/// [0, 1]; higher means more trusted.
struct Correspondence {
    float x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    float weight = 1;

    friend bool operator==(const Correspondence&, const Correspondence&) = default;
};

enum class Source { Oracle, External, Perturbed, Reduced };

std::string source_name(Source s);

struct CorrespondenceSet {
    int t1 = 0;
    int t2 = 1;
    int height = 0;  // frame size the coordinates live in
    int width = 0;
    std::vector<Correspondence> matches;
    Source source = Source::Oracle;

    std::size_t size() const noexcept { return matches.size(); }
    bool empty() const noexcept { return matches.empty(); }

    /// Same matches with the roles of the two frames exchanged.
    CorrespondenceSet swapped() const;
};

/// Grid samples every `stride` pixels where the flow is valid; weight 1.
/// Throws DataError when no grid point is valid.
CorrespondenceSet correspondences_from_flow(const data::FlowField& flow, int stride, int t1, int t2);

/// Oracle matches for any ordered pair of frames of a clip (t1 > t2 allowed).
CorrespondenceSet oracle_for_pair(const std::vector<data::FlowField>& consecutive, int stride, int t1, int t2);

struct LoadReport {
    std::size_t lines = 0;
    std::size_t kept = 0;
    std::size_t dropped_out_of_bounds = 0;
    std::size_t clamped_weights = 0;
    bool empty_file = false;
};

/// All matches in a JSON-lines file, grouped by (t1, t2), coordinates checked
/// against a height x width frame. Rows out of bounds are dropped and
/// counted; weights outside [0, 1] are clamped and counted. Malformed lines
/// throw DataError naming the line number.
std::vector<CorrespondenceSet> load_external_file(const std::filesystem::path& path, int height, int width,
                                                  LoadReport* report = nullptr);

/// Single-pair convenience: the matches of the lowest (t1, t2) pair in the
/// file, including rows stored as (t2, t1). An empty file yields an empty
/// set and a warning.
CorrespondenceSet load_external(const std::filesystem::path& path, int height, int width,
                                LoadReport* report = nullptr);

/// Matches between t1 and t2 from a loaded file, swapping rows stored in the
/// opposite direction. Returns an empty set when none exist.
CorrespondenceSet select_pair(const std::vector<CorrespondenceSet>& sets, int t1, int t2, int height, int width);

void save_external(const std::filesystem::path& path, const std::vector<CorrespondenceSet>& sets);

/// Uniform offsets in [-max_offset_px, max_offset_px] on (x2, y2), then
/// clamped to the frame. Deterministic in rng_seed.
CorrespondenceSet perturb(const CorrespondenceSet& set, double max_offset_px, std::uint64_t rng_seed);

/// Keeps ceil(keep_fraction * M) matches drawn uniformly without
/// replacement, preserving their original order.
CorrespondenceSet reduce(const CorrespondenceSet& set, double keep_fraction, std::uint64_t rng_seed);

/// Shifts matches into a crop window [x0, x0+w) x [y0, y0+h) shared by both
/// frames and drops those falling outside it.
CorrespondenceSet crop(const CorrespondenceSet& set, int x0, int y0, int height, int width);

/// Mean over matches of the channel-mean |a(x1,y1) - b(x2,y2)| with bilinear
/// sampling; the photometric agreement check used for oracle validation.
double endpoint_mean_abs_error(const Frame& a, const Frame& b, const CorrespondenceSet& set);

}  // namespace lumisplit::correspondence
