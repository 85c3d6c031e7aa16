#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <sstream>

#include "lumisplit/training.hpp"

namespace lumisplit::training {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

std::string unquote(std::string v) {
    if (v.size() >= 2 && ((v.front() == '"' && v.back() == '"') || (v.front() == '\'' && v.back() == '\'')))
        return v.substr(1, v.size() - 2);
    return v;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
    throw InvalidArgument("config key '" + key + "': invalid value '" + value + "' (expected " + expected + ")");
}

double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d = 0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        bad_value(key, v, "a number");
    }
    if (pos != v.size() || !std::isfinite(d)) bad_value(key, v, "a number");
    return d;
}

long long to_int(const std::string& key, const std::string& v) {
    long long x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "an integer");
    return x;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    std::uint64_t x = 0;
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
    if (ec != std::errc{} || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
    return x;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    bad_value(key, v, "true or false");
}

std::string fmt_double(double d) {
    std::ostringstream os;
    os.precision(17);
    os << d;
    return os.str();
}

std::string fmt_bool(bool b) { return b ? "true" : "false"; }

using Setter = std::function<void(TrainConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"lr_base", [](TrainConfig& c, auto& k, auto& v) { c.lr_base = to_double(k, v); }},
        {"batch_size", [](TrainConfig& c, auto& k, auto& v) { c.batch_size = static_cast<int>(to_int(k, v)); }},
        {"total_steps", [](TrainConfig& c, auto& k, auto& v) { c.total_steps = static_cast<int>(to_int(k, v)); }},
        {"clip_length", [](TrainConfig& c, auto& k, auto& v) { c.clip_length = static_cast<int>(to_int(k, v)); }},
        {"lambda1", [](TrainConfig& c, auto& k, auto& v) { c.lambda1 = to_double(k, v); }},
        {"lambda2", [](TrainConfig& c, auto& k, auto& v) { c.lambda2 = to_double(k, v); }},
        {"use_consistency", [](TrainConfig& c, auto& k, auto& v) { c.use_consistency = to_bool(k, v); }},
        {"use_smoothness", [](TrainConfig& c, auto& k, auto& v) { c.use_smoothness = to_bool(k, v); }},
        {"use_cfim", [](TrainConfig& c, auto& k, auto& v) { c.use_cfim = to_bool(k, v); }},
        {"dual_supervision", [](TrainConfig& c, auto& k, auto& v) { c.dual_supervision = to_bool(k, v); }},
        {"seed", [](TrainConfig& c, auto& k, auto& v) { c.seed = to_u64(k, v); }},
        {"correspondence_source",
         [](TrainConfig& c, auto& k, auto& v) {
             if (v == "oracle")
                 c.correspondence_source = MatchSource::Oracle;
             else if (v == "external")
                 c.correspondence_source = MatchSource::External;
             else
                 bad_value(k, v, "oracle or external");
         }},
        {"perturb_px", [](TrainConfig& c, auto& k, auto& v) { c.perturb_px = to_double(k, v); }},
        {"keep_fraction", [](TrainConfig& c, auto& k, auto& v) { c.keep_fraction = to_double(k, v); }},
        {"crop_size", [](TrainConfig& c, auto& k, auto& v) { c.crop_size = static_cast<int>(to_int(k, v)); }},
        {"oracle_stride", [](TrainConfig& c, auto& k, auto& v) { c.oracle_stride = static_cast<int>(to_int(k, v)); }},
        {"checkpoint_every",
         [](TrainConfig& c, auto& k, auto& v) { c.checkpoint_every = static_cast<int>(to_int(k, v)); }},
        {"adam_beta1", [](TrainConfig& c, auto& k, auto& v) { c.adam_beta1 = to_double(k, v); }},
        {"adam_beta2", [](TrainConfig& c, auto& k, auto& v) { c.adam_beta2 = to_double(k, v); }},
        {"adam_eps", [](TrainConfig& c, auto& k, auto& v) { c.adam_eps = to_double(k, v); }},
        {"base_channels", [](TrainConfig& c, auto& k, auto& v) { c.base_channels = static_cast<int>(to_int(k, v)); }},
        {"depth", [](TrainConfig& c, auto& k, auto& v) { c.depth = static_cast<int>(to_int(k, v)); }},
        {"attention_scaled", [](TrainConfig& c, auto& k, auto& v) { c.attention_scaled = to_bool(k, v); }},
        {"l_max", [](TrainConfig& c, auto& k, auto& v) { c.l_max = to_double(k, v); }},
    };
    return table;
}

}  // namespace

void TrainConfig::validate() const {
    auto fail = [](const std::string& msg) { throw InvalidArgument("invalid config: " + msg); };
    if (!(lr_base > 0)) fail("lr_base must be > 0");
    if (batch_size < 1) fail("batch_size must be >= 1");
    if (total_steps < 1) fail("total_steps must be >= 1");
    if (clip_length < 2) fail("clip_length must be >= 2");
    if (lambda1 < 0 || lambda2 < 0) fail("lambda1 and lambda2 must be >= 0");
    if (perturb_px < 0) fail("perturb_px must be >= 0");
    if (!(keep_fraction > 0 && keep_fraction <= 1)) fail("keep_fraction must be in (0, 1]");
    if (oracle_stride < 1) fail("oracle_stride must be >= 1");
    if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1 && adam_beta2 >= 0 && adam_beta2 < 1)) fail("adam betas must be in [0, 1)");
    if (!(adam_eps > 0)) fail("adam_eps must be > 0");
    network().validate();
    if (crop_size < 8 || crop_size % (1 << depth) != 0)
        fail("crop_size must be >= 8 and divisible by 2^depth = " + std::to_string(1 << depth));
}

model::NetworkConfig TrainConfig::network() const {
    model::NetworkConfig n;
    n.base_channels = base_channels;
    n.depth = depth;
    n.attention_scaled = attention_scaled;
    n.l_max = static_cast<float>(l_max);
    n.use_cfim = use_cfim;
    return n;
}

losses::LossToggles TrainConfig::toggles() const {
    return {use_consistency, use_smoothness, dual_supervision};
}

TrainConfig parse_config(std::string_view text, const std::string& source) {
    TrainConfig c;
    std::istringstream is{std::string(text)};
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find_first_of("#;");
        std::string body = trim(hash == std::string::npos ? line : line.substr(0, hash));
        if (body.empty() || body.front() == '[') continue;
        const auto eq = body.find('=');
        if (eq == std::string::npos)
            throw InvalidArgument(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
        const std::string key = trim(body.substr(0, eq));
        const std::string value = unquote(trim(body.substr(eq + 1)));
        const auto it = setters().find(key);
        if (it == setters().end()) throw InvalidArgument("unknown config key '" + key + "' (" + source + ")");
        it->second(c, key, value);
    }
    c.validate();
    return c;
}

TrainConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InvalidArgument("cannot read config '" + path.string() + "'");
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config(ss.str(), path.string());
}

std::vector<std::pair<std::string, std::string>> config_items(const TrainConfig& c) {
    return {
        {"lr_base", fmt_double(c.lr_base)},
        {"batch_size", std::to_string(c.batch_size)},
        {"total_steps", std::to_string(c.total_steps)},
        {"clip_length", std::to_string(c.clip_length)},
        {"lambda1", fmt_double(c.lambda1)},
        {"lambda2", fmt_double(c.lambda2)},
        {"use_consistency", fmt_bool(c.use_consistency)},
        {"use_smoothness", fmt_bool(c.use_smoothness)},
        {"use_cfim", fmt_bool(c.use_cfim)},
        {"dual_supervision", fmt_bool(c.dual_supervision)},
        {"seed", std::to_string(c.seed)},
        {"correspondence_source", match_source_name(c.correspondence_source)},
        {"perturb_px", fmt_double(c.perturb_px)},
        {"keep_fraction", fmt_double(c.keep_fraction)},
        {"crop_size", std::to_string(c.crop_size)},
        {"oracle_stride", std::to_string(c.oracle_stride)},
        {"checkpoint_every", std::to_string(c.checkpoint_every)},
        {"adam_beta1", fmt_double(c.adam_beta1)},
        {"adam_beta2", fmt_double(c.adam_beta2)},
        {"adam_eps", fmt_double(c.adam_eps)},
        {"base_channels", std::to_string(c.base_channels)},
        {"depth", std::to_string(c.depth)},
        {"attention_scaled", fmt_bool(c.attention_scaled)},
        {"l_max", fmt_double(c.l_max)},
    };
}

std::string format_config(const TrainConfig& c) {
    std::string out;
    for (const auto& [k, v] : config_items(c)) out += k + " = " + v + "\n";
    return out;
}

bool apply_seed_override(TrainConfig& c) {
    const char* env = std::getenv("LUMISPLIT_SEED");
    if (!env || !*env) return false;
    c.seed = to_u64("LUMISPLIT_SEED", trim(env));
    return true;
}

std::string match_source_name(MatchSource s) { return s == MatchSource::Oracle ? "oracle" : "external"; }

double cosine_lr(int step, int total_steps, double lr_base) {
    if (total_steps < 1 || step < 0 || step > total_steps)
        throw InvalidArgument("cosine_lr: step must be in [0, total_steps]");
    return lr_base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / total_steps));
}

int sample_reference(int t1, int T, std::mt19937_64& rng) {
    if (T < 2) throw InvalidArgument("sample_reference: clip must have at least 2 frames");
    if (t1 < 0 || t1 >= T) throw InvalidArgument("sample_reference: t1 out of range");
    const int lo = std::max(0, t1 - 2);
    const int hi = std::min(T - 1, t1 + 2);
    std::uniform_int_distribution<int> pick(lo, hi - 1);
    const int r = pick(rng);
    return r >= t1 ? r + 1 : r;
}

}  // namespace lumisplit::training
