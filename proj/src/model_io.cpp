#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "pointseq/errors.hpp"
#include "pointseq/model.hpp"
#include "pointseq/util.hpp"
#include "tensor_io.hpp"

namespace pointseq {

namespace {

using detail::append_doubles;
using detail::append_u32;
using detail::append_u64;
using detail::Reader;

constexpr char kMagic[8] = {'P', 'S', 'E', 'Q', 'C', 'K', 'P', '1'};

} // namespace

void save_checkpoint(const std::string& path, const PolicyParams& params, const AdamState& opt,
                     int64_t step, uint64_t decoder_checksum) {
    auto refs = tensor_refs(const_cast<PolicyParams&>(params));
    size_t total = 0;
    for (const auto& r : refs) total += r.size();
    if (!opt.m.empty() && (opt.m.size() != total || opt.v.size() != total))
        throw ConfigError("checkpoint: optimizer state does not match the parameter count");

    nlohmann::json header;
    header["format"] = "pointseq-checkpoint";
    header["version"] = 1;
    header["step"] = step;
    header["param_version"] = params.version;
    header["vocab_hash"] = hex64(params.cfg.vocab().layout_hash());
    header["decoder_checksum"] = hex64(decoder_checksum);
    header["adam_t"] = opt.t;
    header["adam_len"] = opt.m.empty() ? 0 : total;
    const ModelConfig& c = params.cfg;
    header["model"] = {{"k", c.k},           {"l", c.l},
                       {"d", c.d},           {"n_heads", c.n_heads},
                       {"n_blocks", c.n_blocks}, {"patch", c.patch},
                       {"scene_w", c.scene_w},   {"scene_h", c.scene_h},
                       {"max_tokens", c.max_tokens}};
    std::string hj = header.dump();

    std::string buf;
    buf.append(kMagic, sizeof(kMagic));
    append_u32(buf, static_cast<uint32_t>(hj.size()));
    buf += hj;
    for (const auto& r : refs) {
        append_u32(buf, static_cast<uint32_t>(r.name.size()));
        buf += r.name;
        append_u32(buf, static_cast<uint32_t>(r.rows));
        append_u32(buf, static_cast<uint32_t>(r.cols));
        // stored row-major; Eigen holds column-major
        std::vector<double> row_major(r.size());
        for (Eigen::Index i = 0; i < r.rows; ++i)
            for (Eigen::Index j = 0; j < r.cols; ++j)
                row_major[static_cast<size_t>(i) * static_cast<size_t>(r.cols) + static_cast<size_t>(j)] =
                    r.data[static_cast<size_t>(j) * static_cast<size_t>(r.rows) + static_cast<size_t>(i)];
        append_doubles(buf, row_major.data(), row_major.size());
    }
    if (!opt.m.empty()) {
        append_doubles(buf, opt.m.data(), opt.m.size());
        append_doubles(buf, opt.v.data(), opt.v.size());
    }
    append_u64(buf, fnv1a64(buf.data(), buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw IoError("short write to " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (buf.size() < sizeof(kMagic)) throw FileTruncatedError(path + ": shorter than the magic header");
    if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
        if (std::memcmp(buf.data(), kMagic, sizeof(kMagic) - 1) == 0)
            throw FileVersionError(path + ": unsupported checkpoint container version");
        throw IoError(path + ": not a checkpoint file");
    }

    Reader rd{buf, sizeof(kMagic)};
    uint32_t hlen = rd.u32();
    std::string hj = rd.bytes(hlen);
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hj);
    } catch (const nlohmann::json::exception&) {
        throw IoError(path + ": malformed checkpoint header");
    }

    LoadedCheckpoint ck;
    ModelConfig cfg;
    try {
        if (header.at("format").get<std::string>() != "pointseq-checkpoint")
            throw IoError(path + ": not a checkpoint file");
        if (header.at("version").get<int>() != 1)
            throw FileVersionError(path + ": unsupported checkpoint version");
        ck.step = header.at("step").get<int64_t>();
        ck.vocab_hash = parse_hex64(header.at("vocab_hash").get<std::string>());
        ck.decoder_checksum = parse_hex64(header.at("decoder_checksum").get<std::string>());
        const auto& m = header.at("model");
        cfg.k = m.at("k").get<int>();
        cfg.l = m.at("l").get<int>();
        cfg.d = m.at("d").get<int>();
        cfg.n_heads = m.at("n_heads").get<int>();
        cfg.n_blocks = m.at("n_blocks").get<int>();
        cfg.patch = m.at("patch").get<int>();
        cfg.scene_w = m.at("scene_w").get<int>();
        cfg.scene_h = m.at("scene_h").get<int>();
        cfg.max_tokens = m.at("max_tokens").get<int>();
        ck.opt.t = header.at("adam_t").get<int64_t>();
    } catch (const nlohmann::json::exception&) {
        throw IoError(path + ": checkpoint header is missing fields");
    }
    try {
        cfg.validate();
    } catch (const ConfigError& e) {
        throw IoError(path + ": checkpoint header holds an invalid model config: " + e.what());
    }

    ck.params = init_params(cfg, 0);
    ck.params.version = header.at("param_version").get<uint64_t>();
    auto refs = tensor_refs(ck.params);
    size_t total = 0;
    for (auto& r : refs) {
        uint32_t nlen = rd.u32();
        std::string name = rd.bytes(nlen);
        uint32_t rows = rd.u32();
        uint32_t cols = rd.u32();
        if (name != r.name || rows != static_cast<uint32_t>(r.rows) || cols != static_cast<uint32_t>(r.cols))
            throw IoError(path + ": tensor layout mismatch at " + r.name);
        std::vector<double> row_major(r.size());
        rd.doubles(row_major.data(), row_major.size());
        for (Eigen::Index i = 0; i < r.rows; ++i)
            for (Eigen::Index j = 0; j < r.cols; ++j)
                r.data[static_cast<size_t>(j) * static_cast<size_t>(r.rows) + static_cast<size_t>(i)] =
                    row_major[static_cast<size_t>(i) * static_cast<size_t>(r.cols) + static_cast<size_t>(j)];
        total += r.size();
    }
    size_t adam_len = header.at("adam_len").get<size_t>();
    if (adam_len != 0 && adam_len != total) throw IoError(path + ": optimizer state length mismatch");
    if (adam_len > 0) {
        ck.opt.m.resize(adam_len);
        ck.opt.v.resize(adam_len);
        rd.doubles(ck.opt.m.data(), adam_len);
        rd.doubles(ck.opt.v.data(), adam_len);
    }
    size_t body_end = rd.pos;
    uint64_t stored = rd.u64();
    if (rd.pos != buf.size()) throw IoError(path + ": trailing bytes after the checksum");
    if (stored != fnv1a64(buf.data(), body_end)) throw FileChecksumError(path + ": checkpoint checksum mismatch");
    return ck;
}

} // namespace pointseq
