#include <spdlog/spdlog.h>

#include <array>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <sstream>

#include "lumisplit/simd/kernels.hpp"
#include "lumisplit/training.hpp"

namespace lumisplit::training {

namespace {

constexpr std::array<char, 4> kCheckpointMagic{'L', 'S', 'C', 'K'};
constexpr std::array<char, 4> kModelMagic{'L', 'S', 'N', 'M'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <class V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const std::string& source) {
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CheckpointError(source + ": truncated checkpoint");
    return v;
}

void put_string(std::ostream& os, const std::string& s) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& is, const std::string& source) {
    const auto n = get<std::uint32_t>(is, source);
    if (n > (1u << 24)) throw CheckpointError(source + ": corrupt string field");
    std::string s(n, '\0');
    if (!is.read(s.data(), n)) throw CheckpointError(source + ": truncated checkpoint");
    return s;
}

template <class T>
Image<T> crop_image(const Image<T>& src, int x0, int y0, int h, int w) {
    Image<T> out(src.channels(), h, w);
    for (int c = 0; c < src.channels(); ++c)
        for (int y = 0; y < h; ++y)
            std::copy(&src.at(c, y0 + y, x0), &src.at(c, y0 + y, x0) + w, &out.at(c, y, 0));
    return out;
}

void accumulate(losses::LossReport& acc, const losses::LossReport& r, double w) {
    acc.total += w * r.total;
    acc.rec_t1 += w * r.rec_t1;
    acc.rec_t2 += w * r.rec_t2;
    acc.smooth_t1 += w * r.smooth_t1;
    acc.smooth_t2 += w * r.smooth_t2;
    acc.consistency += w * r.consistency;
}

}  // namespace

// ---- Adam -----------------------------------------------------------------

Adam::Adam(const std::vector<model::Parameter<float>*>& params, double beta1, double beta2, double eps)
    : beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto* p : params) {
        m_.emplace_back(p->size(), 0.0f);
        v_.emplace_back(p->size(), 0.0f);
    }
}

void Adam::step(const std::vector<model::Parameter<float>*>& params, double lr) {
    if (params.size() != m_.size()) throw InvalidArgument("Adam: parameter list changed");
    ++t_;
    simd::AdamStep s;
    s.lr = static_cast<float>(lr);
    s.beta1 = static_cast<float>(beta1_);
    s.beta2 = static_cast<float>(beta2_);
    s.eps = static_cast<float>(eps_);
    s.bias_correction1 = static_cast<float>(1.0 - std::pow(beta1_, static_cast<double>(t_)));
    s.bias_correction2 = static_cast<float>(1.0 - std::pow(beta2_, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto* p = params[i];
        simd::adam_update(p->value.data(), p->grad.data(), m_[i].data(), v_[i].data(), p->size(), s);
    }
}

void Adam::write(std::ostream& os) const {
    put<std::int64_t>(os, t_);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(m_.size()));
    for (std::size_t i = 0; i < m_.size(); ++i) {
        put<std::uint64_t>(os, m_[i].size());
        os.write(reinterpret_cast<const char*>(m_[i].data()), static_cast<std::streamsize>(m_[i].size() * 4));
        os.write(reinterpret_cast<const char*>(v_[i].data()), static_cast<std::streamsize>(v_[i].size() * 4));
    }
}

void Adam::read(std::istream& is, const std::string& source) {
    t_ = get<std::int64_t>(is, source);
    const auto n = get<std::uint32_t>(is, source);
    if (n != m_.size()) throw CheckpointError(source + ": optimizer state does not match the model");
    for (std::size_t i = 0; i < m_.size(); ++i) {
        if (get<std::uint64_t>(is, source) != m_[i].size())
            throw CheckpointError(source + ": optimizer state does not match the model");
        if (!is.read(reinterpret_cast<char*>(m_[i].data()), static_cast<std::streamsize>(m_[i].size() * 4)) ||
            !is.read(reinterpret_cast<char*>(v_[i].data()), static_cast<std::streamsize>(v_[i].size() * 4)))
            throw CheckpointError(source + ": truncated checkpoint");
    }
}

// ---- Trainer --------------------------------------------------------------

Trainer::Trainer(TrainConfig config, std::vector<data::ClipPair> dataset,
                 std::vector<std::vector<correspondence::CorrespondenceSet>> external)
    : config_(std::move(config)),
      dataset_(std::move(dataset)),
      external_(std::move(external)),
      net_((config_.validate(), config_.network()), config_.seed),
      rng_(config_.seed ^ 0x9E3779B97F4A7C15ULL) {
    if (dataset_.empty()) throw DataError("empty dataset");
    for (const auto& clip : dataset_) {
        if (clip.length() < config_.clip_length)
            throw DataError("clip '" + clip.id() + "' has " + std::to_string(clip.length()) +
                            " frames, fewer than clip_length " + std::to_string(config_.clip_length));
        const auto& f = clip.low.frames.front();
        if (f.height() < config_.crop_size || f.width() < config_.crop_size)
            throw DataError("clip '" + clip.id() + "' frames (" + std::to_string(f.height()) + "x" +
                            std::to_string(f.width()) + ") are smaller than crop_size " +
                            std::to_string(config_.crop_size));
    }
    if (config_.correspondence_source == MatchSource::External && external_.size() != dataset_.size())
        throw InvalidArgument("external correspondence source needs one match list per clip");
    adam_ = Adam(net_.parameters(), config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
}

double Trainer::current_lr() const {
    return cosine_lr(std::min(step_, config_.total_steps), config_.total_steps, config_.lr_base);
}

correspondence::CorrespondenceSet Trainer::matches_for(std::size_t clip, int t1, int t2) {
    const auto& pair = dataset_[clip];
    const int H = pair.low.frames.front().height();
    const int W = pair.low.frames.front().width();
    correspondence::CorrespondenceSet set;
    if (config_.correspondence_source == MatchSource::Oracle) {
        try {
            set = correspondence::oracle_for_pair(pair.flows, config_.oracle_stride, t1, t2);
        } catch (const DataError&) {
            set = {};
            set.t1 = t1;
            set.t2 = t2;
            set.height = H;
            set.width = W;
        }
    } else {
        set = correspondence::select_pair(external_[clip], t1, t2, H, W);
    }
    if (config_.perturb_px > 0) set = correspondence::perturb(set, config_.perturb_px, rng_());
    if (config_.keep_fraction < 1.0 && !set.empty()) set = correspondence::reduce(set, config_.keep_fraction, rng_());
    return set;
}

losses::LossReport Trainer::train_step() {
    std::vector<TrainSample> batch(static_cast<std::size_t>(config_.batch_size));
    std::uniform_int_distribution<std::size_t> pick_clip(0, dataset_.size() - 1);
    std::uniform_int_distribution<int> pick_t(0, config_.clip_length - 1);
    for (auto& s : batch) {
        s.clip = pick_clip(rng_);
        s.t1 = pick_t(rng_);
    }
    return train_step(batch);
}

losses::LossReport Trainer::train_step(const std::vector<TrainSample>& batch) {
    if (batch.empty()) throw InvalidArgument("train_step: empty batch");
    const double lr = current_lr();
    const auto toggles = config_.toggles();
    const float scale = 1.0f / static_cast<float>(batch.size());
    const double w = 1.0 / static_cast<double>(batch.size());
    losses::LossReport avg;
    avg.lambda1 = config_.lambda1;
    avg.lambda2 = config_.lambda2;
    net_.zero_grad();
    for (const auto& s : batch) {
        if (s.clip >= dataset_.size()) throw InvalidArgument("train_step: clip index out of range");
        if (s.t1 < 0 || s.t1 >= config_.clip_length) throw InvalidArgument("train_step: t1 out of range");
        const auto& pair = dataset_[s.clip];
        const int t1 = s.t1;
        const int t2 = sample_reference(t1, config_.clip_length, rng_);
        const auto& full1 = pair.low.frames[static_cast<std::size_t>(t1)];
        const int H = full1.height(), W = full1.width(), cs = config_.crop_size;

        correspondence::CorrespondenceSet full_matches;
        if (config_.use_consistency) full_matches = matches_for(s.clip, t1, t2);
        std::uniform_int_distribution<int> pick_x(0, W - cs);
        std::uniform_int_distribution<int> pick_y(0, H - cs);
        int x0 = 0, y0 = 0;
        correspondence::CorrespondenceSet matches;
        const int attempts = config_.use_consistency ? 10 : 1;
        for (int a = 0; a < attempts; ++a) {
            x0 = pick_x(rng_);
            y0 = pick_y(rng_);
            if (!config_.use_consistency) break;
            matches = correspondence::crop(full_matches, x0, y0, cs, cs);
            if (!matches.empty()) break;
        }
        if (config_.use_consistency && matches.empty()) {
            ++skipped_consistency_;
            spdlog::warn("step {}: no correspondences for clip '{}' pair ({}, {}); consistency term skipped", step_ + 1,
                         pair.id(), t1, t2);
        }

        const auto low1 = crop_image(full1, x0, y0, cs, cs);
        const auto low2 = crop_image(pair.low.frames[static_cast<std::size_t>(t2)], x0, y0, cs, cs);
        const auto n1 = crop_image(pair.normal.frames[static_cast<std::size_t>(t1)], x0, y0, cs, cs);
        const auto n2 = crop_image(pair.normal.frames[static_cast<std::size_t>(t2)], x0, y0, cs, cs);

        const auto trace = net_.forward_dual_trace(low1, low2);
        const auto w1 = losses::smoothness_weights(low1);
        const auto w2 = losses::smoothness_weights(low2);
        losses::ObjectiveInputs<float> in{&n1, &n2, &trace.out[0], &trace.out[1], &matches, &w1, &w2};
        auto g1 = trace.out[0].zeros_like();
        auto g2 = trace.out[1].zeros_like();
        const auto rep =
            losses::total_objective_backward(in, config_.lambda1, config_.lambda2, toggles, scale, g1, g2);
        net_.backward(trace, g1, g2);
        accumulate(avg, rep, w);
    }
    adam_.step(net_.parameters(), lr);
    ++step_;
    return avg;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
        os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
        put<std::uint32_t>(os, kCheckpointVersion);
        put<std::int32_t>(os, step_);
        put<std::uint64_t>(os, skipped_consistency_);
        put_string(os, format_config(config_));
        model::write_model(os, net_);
        adam_.write(os);
        std::ostringstream rng;
        rng << rng_;
        put_string(os, rng.str());
        if (!os) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
    }
    std::filesystem::rename(tmp, path);
}

namespace {

struct CheckpointHeader {
    int step = 0;
    std::uint64_t skipped = 0;
    std::string config_text;
};

CheckpointHeader read_header(std::istream& is, const std::string& source) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic)
        throw CheckpointError(source + ": not a training checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(is, source);
    if (version != kCheckpointVersion)
        throw CheckpointError(source + ": unsupported checkpoint version " + std::to_string(version));
    CheckpointHeader h;
    h.step = get<std::int32_t>(is, source);
    h.skipped = get<std::uint64_t>(is, source);
    h.config_text = get_string(is, source);
    return h;
}

}  // namespace

void Trainer::load_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    const std::string src = path.string();
    const auto header = read_header(is, src);
    const auto expected = config_.network();
    auto net = model::read_model(is, src, &expected);
    Adam adam(net.parameters(), config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
    adam.read(is, src);
    std::istringstream rng_text(get_string(is, src));
    std::mt19937_64 rng;
    rng_text >> rng;
    if (!rng_text) throw CheckpointError(src + ": corrupt rng state");
    net_ = std::move(net);
    adam_ = std::move(adam);
    rng_ = rng;
    step_ = header.step;
    skipped_consistency_ = header.skipped;
}

model::DecompositionNet<float> load_model_from_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size())) throw CheckpointError(path.string() + ": empty or truncated checkpoint");
    is.seekg(0);
    if (magic == kModelMagic) return model::read_model(is, path.string());
    read_header(is, path.string());
    return model::read_model(is, path.string());
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
    static const std::regex pattern(R"(ckpt_(\d+)\.bin)");
    std::filesystem::path best;
    long long best_step = -1;
    if (!std::filesystem::is_directory(dir)) return best;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        std::smatch m;
        const std::string name = e.path().filename().string();
        if (e.is_regular_file() && std::regex_match(name, m, pattern)) {
            const long long s = std::stoll(m[1].str());
            if (s > best_step) {
                best_step = s;
                best = e.path();
            }
        }
    }
    return best;
}

std::vector<std::vector<correspondence::CorrespondenceSet>> load_external_matches(
    const std::filesystem::path& data_dir, const std::vector<data::ClipPair>& dataset) {
    std::vector<std::vector<correspondence::CorrespondenceSet>> out;
    for (const auto& clip : dataset) {
        const std::string name = "matches_" + clip.id() + ".jsonl";
        std::filesystem::path p = data_dir / clip.id() / name;
        if (!std::filesystem::exists(p)) p = data_dir / name;
        if (!std::filesystem::exists(p))
            throw DataError("no external correspondence file '" + name + "' for clip '" + clip.id() + "'");
        const auto& f = clip.low.frames.front();
        out.push_back(correspondence::load_external_file(p, f.height(), f.width()));
    }
    return out;
}

namespace {

void truncate_log(const std::filesystem::path& log, int max_step) {
    if (!std::filesystem::exists(log)) return;
    std::ifstream is(log);
    std::string line, kept;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("step")) continue;
        if (j["step"].get<int>() <= max_step) kept += line + "\n";
    }
    is.close();
    std::ofstream os(log, std::ios::trunc);
    os << kept;
}

}  // namespace

FitResult fit(const TrainConfig& config, const std::filesystem::path& data_dir, const std::filesystem::path& out_dir,
              bool resume) {
    config.validate();
    auto dataset = data::load_dataset(data_dir);
    std::vector<std::vector<correspondence::CorrespondenceSet>> external;
    if (config.correspondence_source == MatchSource::External) external = load_external_matches(data_dir, dataset);
    Trainer trainer(config, std::move(dataset), std::move(external));

    std::filesystem::create_directories(out_dir);
    const auto log_path = out_dir / "train_log.jsonl";
    if (resume) {
        const auto ckpt = latest_checkpoint(out_dir);
        if (!ckpt.empty()) {
            trainer.load_checkpoint(ckpt);
            spdlog::info("resumed from {} at step {}", ckpt.string(), trainer.step());
        } else {
            spdlog::info("no checkpoint in {}; starting fresh", out_dir.string());
        }
        truncate_log(log_path, trainer.step());
    } else {
        std::ofstream(log_path, std::ios::trunc);
    }

    std::ofstream log(log_path, std::ios::app);
    if (!log) throw DataError("cannot write '" + log_path.string() + "'");
    FitResult result;
    const int start = trainer.step();
    while (trainer.step() < config.total_steps) {
        const double lr = trainer.current_lr();
        result.last = trainer.train_step();
        const int s = trainer.step();
        const nlohmann::json row = {{"step", s},
                                    {"lr", lr},
                                    {"total", result.last.total},
                                    {"rec_t1", result.last.rec_t1},
                                    {"rec_t2", result.last.rec_t2},
                                    {"smooth_t1", result.last.smooth_t1},
                                    {"smooth_t2", result.last.smooth_t2},
                                    {"consistency", result.last.consistency}};
        log << row.dump() << '\n';
        if (s % 100 == 0 || s == config.total_steps) {
            log.flush();
            spdlog::info("step {}/{} lr {:.3g} total {:.5f}", s, config.total_steps, lr, result.last.total);
        }
        if (s % config.checkpoint_every == 0 || s == config.total_steps)
            trainer.save_checkpoint(out_dir / ("ckpt_" + std::to_string(s) + ".bin"));
    }
    result.final_step = trainer.step();
    result.steps_run = trainer.step() - start;
    result.final_checkpoint = out_dir / ("ckpt_" + std::to_string(trainer.step()) + ".bin");
    if (!std::filesystem::exists(result.final_checkpoint)) trainer.save_checkpoint(result.final_checkpoint);
    return result;
}

}  // namespace lumisplit::training
