#pragma once

#include <nlohmann/json.hpp>

#include <cstring>
#include <fstream>

#include "evseg/model.hpp"

// Checkpoint container: magic "EVSG", u32 version, length-prefixed JSON
// config blob, u64 training step counter, then per-parameter records of
// (name, shape, little-endian 32-bit floats). Round trips are bit-exact
// for float parameters.

namespace evseg {

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"inChannels", c.inChannels},
                       {"numClasses", c.numClasses},
                       {"baseWidths", c.baseWidths},
                       {"inputH", c.inputH},
                       {"inputW", c.inputW},
                       {"timesteps", c.timesteps},
                       {"surrogateAlpha", c.surrogateAlpha},
                       {"threshold", c.threshold},
                       {"leakInit", c.leakInit},
                       {"upKernel", c.upKernel},
                       {"additiveSkips", c.additiveSkips}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
    j.at("inChannels").get_to(c.inChannels);
    j.at("numClasses").get_to(c.numClasses);
    j.at("baseWidths").get_to(c.baseWidths);
    j.at("inputH").get_to(c.inputH);
    j.at("inputW").get_to(c.inputW);
    j.at("timesteps").get_to(c.timesteps);
    j.at("surrogateAlpha").get_to(c.surrogateAlpha);
    j.at("threshold").get_to(c.threshold);
    j.at("leakInit").get_to(c.leakInit);
    j.at("upKernel").get_to(c.upKernel);
    j.at("additiveSkips").get_to(c.additiveSkips);
}

class CheckpointError : public std::runtime_error {
  public:
    enum class Code { BadMagic, UnsupportedVersion, Truncated, Mismatch, Io };
    CheckpointError(Code code, const std::string& msg) : std::runtime_error(msg), code_(code) {}
    Code code() const { return code_; }

  private:
    Code code_;
};

namespace detail {

constexpr char kMagic[4] = {'E', 'V', 'S', 'G'};
constexpr std::uint32_t kVersion = 1;

inline void write_u32(std::ostream& os, std::uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}
inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), 8);
}
inline std::uint32_t read_u32(std::istream& is) {
    std::uint32_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 4))
        throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
    return v;
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v;
    if (!is.read(reinterpret_cast<char*>(&v), 8))
        throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
    return v;
}

}  // namespace detail

template <class S>
void save_checkpoint(EvSegNet<S>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError(CheckpointError::Code::Io, "cannot open " + path + " for writing");
    os.write(detail::kMagic, 4);
    detail::write_u32(os, detail::kVersion);
    const std::string cfg = nlohmann::json(net.cfg).dump();
    detail::write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
    detail::write_u64(os, static_cast<std::uint64_t>(net.train_step));

    std::uint32_t count = 0;
    net.for_each_param([&](const ParamRef<S>&) { ++count; });
    detail::write_u32(os, count);
    net.for_each_param([&](const ParamRef<S>& p) {
        detail::write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        std::vector<std::uint32_t> shape =
            p.tensor ? std::vector<std::uint32_t>(p.tensor->shape.begin(), p.tensor->shape.end())
                     : std::vector<std::uint32_t>{1};
        detail::write_u32(os, static_cast<std::uint32_t>(shape.size()));
        for (auto d : shape) detail::write_u32(os, d);
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const float v = static_cast<float>(p.get(i));
            os.write(reinterpret_cast<const char*>(&v), 4);
        }
    });
    if (!os) throw CheckpointError(CheckpointError::Code::Io, "write failed for " + path);
}

template <class S>
EvSegNet<S> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError(CheckpointError::Code::Io, "cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4))
        throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
    if (std::memcmp(magic, detail::kMagic, 4) != 0)
        throw CheckpointError(CheckpointError::Code::BadMagic, "bad magic in " + path);
    const std::uint32_t version = detail::read_u32(is);
    if (version != detail::kVersion)
        throw CheckpointError(CheckpointError::Code::UnsupportedVersion,
                              "unsupported version " + std::to_string(version));
    const std::uint32_t cfgLen = detail::read_u32(is);
    std::string cfgStr(cfgLen, '\0');
    if (!is.read(cfgStr.data(), cfgLen))
        throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
    ModelConfig cfg;
    try {
        nlohmann::json::parse(cfgStr).get_to(cfg);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(CheckpointError::Code::Mismatch,
                              std::string("malformed config blob: ") + e.what());
    }
    auto net = build_model<S>(cfg);
    net.train_step = static_cast<std::int64_t>(detail::read_u64(is));

    const std::uint32_t count = detail::read_u32(is);
    std::uint32_t expected = 0;
    net.for_each_param([&](const ParamRef<S>&) { ++expected; });
    if (count != expected)
        throw CheckpointError(CheckpointError::Code::Mismatch,
                              "parameter count mismatch: file has " + std::to_string(count));

    net.for_each_param([&](const ParamRef<S>& p) {
        const std::uint32_t nameLen = detail::read_u32(is);
        std::string name(nameLen, '\0');
        if (!is.read(name.data(), nameLen))
            throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
        if (name != p.name)
            throw CheckpointError(CheckpointError::Code::Mismatch,
                                  "unexpected parameter " + name + ", wanted " + p.name);
        const std::uint32_t ndim = detail::read_u32(is);
        std::int64_t n = 1;
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < ndim; ++i) {
            shape.push_back(static_cast<int>(detail::read_u32(is)));
            n *= shape.back();
        }
        if (p.tensor && shape != p.tensor->shape)
            throw CheckpointError(CheckpointError::Code::Mismatch,
                                  "shape mismatch for " + name);
        if (!p.tensor && n != 1)
            throw CheckpointError(CheckpointError::Code::Mismatch,
                                  "scalar parameter " + name + " has " + std::to_string(n) +
                                      " entries");
        for (std::int64_t i = 0; i < n; ++i) {
            float v;
            if (!is.read(reinterpret_cast<char*>(&v), 4))
                throw CheckpointError(CheckpointError::Code::Truncated, "truncated checkpoint");
            p.set(i, static_cast<S>(v));
        }
    });
    return net;
}

}  // namespace evseg
