#include <array>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "lumisplit/model.hpp"

namespace lumisplit::model {

namespace {

constexpr std::array<char, 4> kMagic{'L', 'S', 'N', 'M'};

template <class V>
void put(std::ostream& os, V v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::istream& is, const std::string& source) {
    V v{};
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(V))) throw CheckpointError(source + ": truncated model data");
    return v;
}

std::string describe(const NetworkConfig& c) {
    return "base_channels=" + std::to_string(c.base_channels) + " depth=" + std::to_string(c.depth) +
           " attention_scaled=" + std::to_string(c.attention_scaled) + " use_cfim=" + std::to_string(c.use_cfim) +
           " l_max=" + std::to_string(c.l_max);
}

}  // namespace

void write_model(std::ostream& os, const DecompositionNet<float>& net) {
    os.write(kMagic.data(), kMagic.size());
    put<std::uint32_t>(os, kModelFormatVersion);
    const auto& c = net.config();
    put<std::int32_t>(os, c.base_channels);
    put<std::int32_t>(os, c.depth);
    put<std::uint8_t>(os, c.attention_scaled ? 1 : 0);
    put<std::uint8_t>(os, c.use_cfim ? 1 : 0);
    put<float>(os, c.l_max);
    const auto params = net.parameters();
    put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
    for (const auto* p : params) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
        os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
        put<std::uint64_t>(os, p->size());
        os.write(reinterpret_cast<const char*>(p->value.data()), static_cast<std::streamsize>(p->size() * sizeof(float)));
    }
}

DecompositionNet<float> read_model(std::istream& is, const std::string& source, const NetworkConfig* expected) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), magic.size()) || magic != kMagic)
        throw CheckpointError(source + ": not a model checkpoint (bad magic)");
    const auto version = get<std::uint32_t>(is, source);
    if (version != kModelFormatVersion)
        throw CheckpointError(source + ": unsupported model format version " + std::to_string(version));
    NetworkConfig c;
    c.base_channels = get<std::int32_t>(is, source);
    c.depth = get<std::int32_t>(is, source);
    c.attention_scaled = get<std::uint8_t>(is, source) != 0;
    c.use_cfim = get<std::uint8_t>(is, source) != 0;
    c.l_max = get<float>(is, source);
    try {
        c.validate();
    } catch (const InvalidArgument& e) {
        throw CheckpointError(source + ": invalid stored config: " + e.what());
    }
    if (expected && !(*expected == c))
        throw CheckpointError(source + ": config mismatch (stored " + describe(c) + ", expected " +
                              describe(*expected) + ")");
    DecompositionNet<float> net(c, 0);
    auto params = net.parameters();
    const auto count = get<std::uint32_t>(is, source);
    if (count != params.size())
        throw CheckpointError(source + ": parameter count " + std::to_string(count) + " does not match architecture (" +
                              std::to_string(params.size()) + ")");
    for (auto* p : params) {
        const auto len = get<std::uint32_t>(is, source);
        if (len > 4096) throw CheckpointError(source + ": corrupt parameter name");
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw CheckpointError(source + ": truncated model data");
        if (name != p->name) throw CheckpointError(source + ": expected parameter '" + p->name + "', found '" + name + "'");
        const auto n = get<std::uint64_t>(is, source);
        if (n != p->size())
            throw CheckpointError(source + ": parameter '" + name + "' has " + std::to_string(n) + " values, expected " +
                                  std::to_string(p->size()));
        if (!is.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(n * sizeof(float))))
            throw CheckpointError(source + ": truncated model data");
    }
    return net;
}

void save_model(const std::filesystem::path& path, const DecompositionNet<float>& net) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("cannot write checkpoint '" + path.string() + "'");
    write_model(os, net);
    if (!os) throw CheckpointError("failed writing checkpoint '" + path.string() + "'");
}

DecompositionNet<float> load_model(const std::filesystem::path& path, const NetworkConfig* expected) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
    return read_model(is, path.string(), expected);
}

}  // namespace lumisplit::model
