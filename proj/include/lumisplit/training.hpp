#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "lumisplit/correspondence.hpp"
#include "lumisplit/data.hpp"
#include "lumisplit/losses.hpp"
#include "lumisplit/model.hpp"

namespace lumisplit::training {

enum class MatchSource { Oracle, External };

struct TrainConfig {
    double lr_base = 4e-4;
    int batch_size = 4;
    int total_steps = 2000;
    int clip_length = 5;
    double lambda1 = 0.1;
    double lambda2 = 0.05;
    bool use_consistency = true;
    bool use_smoothness = true;
    bool use_cfim = true;
    bool dual_supervision = true;
    std::uint64_t seed = 0;
    MatchSource correspondence_source = MatchSource::Oracle;
    double perturb_px = 0.0;
    double keep_fraction = 1.0;

    int crop_size = 64;
    int oracle_stride = 4;
    int checkpoint_every = 500;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;

    int base_channels = 32;
    int depth = 3;
    bool attention_scaled = false;
    double l_max = 4.0;

    void validate() const;
    model::NetworkConfig network() const;
    losses::LossToggles toggles() const;
};

/// Parses `key = value` lines. Blank lines, `#`/`;` comments and `[section]`
/// headers are ignored. Unknown keys and malformed values throw
/// InvalidArgument naming the key.
TrainConfig parse_config(std::string_view text, const std::string& source = "config");
TrainConfig load_config(const std::filesystem::path& path);

/// Ordered key/value pairs covering every field; parse_config accepts the
/// joined `key = value` form.
std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& config);
std::string format_config(const TrainConfig& config);

/// Replaces config.seed with LUMISPLIT_SEED when that variable is set.
/// Returns true if an override was applied.
bool apply_seed_override(TrainConfig& config);

std::string match_source_name(MatchSource s);

/// lr_base * 0.5 * (1 + cos(pi * step / total_steps)).
double cosine_lr(int step, int total_steps, double lr_base);

/// Uniform over the frames within +-2 of t1, excluding t1.
int sample_reference(int t1, int T, std::mt19937_64& rng);

/// Adam with bias correction, one moment pair per parameter tensor.
class Adam {
public:
    Adam() = default;
    Adam(const std::vector<model::Parameter<float>*>& params, double beta1, double beta2, double eps);

    void step(const std::vector<model::Parameter<float>*>& params, double lr);
    std::int64_t steps_taken() const noexcept { return t_; }

    void write(std::ostream& os) const;
    void read(std::istream& is, const std::string& source);

private:
    double beta1_ = 0.9;
    double beta2_ = 0.999;
    double eps_ = 1e-8;
    std::int64_t t_ = 0;
    std::vector<std::vector<float>> m_;
    std::vector<std::vector<float>> v_;
};

struct TrainSample {
    std::size_t clip = 0;  // index into the trainer's dataset
    int t1 = 0;
};

/// Owns the model, optimizer, and random state of one training run.
class Trainer {
public:
    /// `external` holds per-clip match files (same order as `dataset`) when
    /// the configured source is external; it may be empty otherwise.
    Trainer(TrainConfig config, std::vector<data::ClipPair> dataset,
            std::vector<std::vector<correspondence::CorrespondenceSet>> external = {});

    /// Draws a batch (uniform clip, uniform t1) and runs one update.
    losses::LossReport train_step();
    /// One update on an explicit batch; reference frames are still drawn.
    losses::LossReport train_step(const std::vector<TrainSample>& batch);

    int step() const noexcept { return step_; }
    double current_lr() const;
    const TrainConfig& config() const noexcept { return config_; }
    model::DecompositionNet<float>& model() noexcept { return net_; }
    const model::DecompositionNet<float>& model() const noexcept { return net_; }
    std::size_t skipped_consistency() const noexcept { return skipped_consistency_; }

    void save_checkpoint(const std::filesystem::path& path) const;
    /// Restores model, optimizer, rng and step. Throws CheckpointError if the
    /// stored network config differs from this trainer's.
    void load_checkpoint(const std::filesystem::path& path);

private:
    correspondence::CorrespondenceSet matches_for(std::size_t clip, int t1, int t2);

    TrainConfig config_;
    std::vector<data::ClipPair> dataset_;
    std::vector<std::vector<correspondence::CorrespondenceSet>> external_;
    model::DecompositionNet<float> net_;
    Adam adam_;
    std::mt19937_64 rng_;
    int step_ = 0;
    std::size_t skipped_consistency_ = 0;
};

/// Per-clip external matches found at `<clip_dir>/matches_<id>.jsonl`, then
/// `<data_dir>/matches_<id>.jsonl`. Throws DataError if a clip has neither.
std::vector<std::vector<correspondence::CorrespondenceSet>> load_external_matches(
    const std::filesystem::path& data_dir, const std::vector<data::ClipPair>& dataset);

struct FitResult {
    std::filesystem::path final_checkpoint;
    int final_step = 0;
    int steps_run = 0;
    losses::LossReport last;
};

/// Runs training to config.total_steps, appending one JSON line per step to
/// `<out_dir>/train_log.jsonl` and writing `ckpt_<step>.bin` every
/// checkpoint_every steps and at the end. With `resume`, continues from the
/// latest checkpoint in `out_dir`.
FitResult fit(const TrainConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
              bool resume = false);

/// Latest `ckpt_<step>.bin` in `dir`, or an empty path.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

/// Reads only the model from a trainer checkpoint or a bare model file.
model::DecompositionNet<float> load_model_from_checkpoint(const std::filesystem::path& path);

}  // namespace lumisplit::training
