#include "fairvit/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace fairvit {

namespace {

constexpr char kMagic[5] = {'F', 'V', 'G', 'A', 'N'};
constexpr uint16_t kVersion = 1;

void put_u16(std::ostream& out, uint16_t v) {
    const char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>(v >> 8)};
    out.write(b, 2);
}

void put_u64(std::ostream& out, uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
    out.write(b, 8);
}

void put_f64(std::ostream& out, double d) {
    put_u64(out, std::bit_cast<uint64_t>(d));
}

uint16_t get_u16(std::istream& in) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

double get_f64(std::istream& in) {
    return std::bit_cast<double>(get_u64(in));
}

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_tensor_record(std::ostream& out, const std::string& name, const Tensor& t) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, t.rank());
    for (size_t d : t.shape()) put_u64(out, d);
    for (double v : t.data()) put_f64(out, v);
}

}  // namespace

std::string model_config_text(const ModelConfig& cfg) {
    std::map<std::string, std::string> kv;
    kv["attr_classes"] = std::to_string(cfg.attr_classes);
    kv["channels"] = std::to_string(cfg.channels);
    std::string chans;
    for (size_t i = 0; i < cfg.cnn_channels.size(); ++i) {
        if (i) chans += ",";
        chans += std::to_string(cfg.cnn_channels[i]);
    }
    kv["cnn_channels"] = chans;
    kv["d_cnn"] = std::to_string(cfg.d_cnn);
    kv["d_vit"] = std::to_string(cfg.d_vit);
    kv["dropout"] = fmt_double(cfg.dropout);
    kv["grl_lambda"] = fmt_double(cfg.grl_lambda);
    kv["head_hidden"] = std::to_string(cfg.head_hidden);
    kv["head_hidden_layers"] = std::to_string(cfg.head_hidden_layers);
    kv["heads"] = std::to_string(cfg.heads);
    kv["image_size"] = std::to_string(cfg.image_size);
    kv["patch"] = std::to_string(cfg.patch);
    kv["variant"] = variant_name(cfg.variant);
    kv["vit_depth"] = std::to_string(cfg.vit_depth);
    kv["vit_mlp_hidden"] = std::to_string(cfg.vit_mlp_hidden);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError("config text: missing '=' in line '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "attr_classes") cfg.attr_classes = std::stoul(v);
        else if (k == "channels") cfg.channels = std::stoul(v);
        else if (k == "cnn_channels") {
            cfg.cnn_channels.clear();
            std::istringstream cs(v);
            std::string tok;
            while (std::getline(cs, tok, ',')) {
                if (!tok.empty()) cfg.cnn_channels.push_back(std::stoul(tok));
            }
        } else if (k == "d_cnn") cfg.d_cnn = std::stoul(v);
        else if (k == "d_vit") cfg.d_vit = std::stoul(v);
        else if (k == "dropout") cfg.dropout = std::stod(v);
        else if (k == "grl_lambda") cfg.grl_lambda = std::stod(v);
        else if (k == "head_hidden") cfg.head_hidden = std::stoul(v);
        else if (k == "head_hidden_layers") cfg.head_hidden_layers = std::stoul(v);
        else if (k == "heads") cfg.heads = std::stoul(v);
        else if (k == "image_size") cfg.image_size = std::stoul(v);
        else if (k == "patch") cfg.patch = std::stoul(v);
        else if (k == "variant") cfg.variant = variant_from_name(v);
        else if (k == "vit_depth") cfg.vit_depth = std::stoul(v);
        else if (k == "vit_mlp_hidden") cfg.vit_mlp_hidden = std::stoul(v);
        else throw ValidationError("config text: unknown key '" + k + "'");
    }
    return cfg;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint " + path + " for writing");
    out.write(kMagic, 5);
    put_u16(out, kVersion);
    const std::string cfg_text = model_config_text(ckpt.config);
    put_u64(out, cfg_text.size());
    out.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));

    uint64_t count = ckpt.params.count() + ckpt.extras.size();
    put_u64(out, count);
    ckpt.params.for_each([&](const std::string& n, const Tensor& t) { write_tensor_record(out, n, t); });
    for (const auto& [n, t] : ckpt.extras) write_tensor_record(out, n, t);
    if (!out) throw IoError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path);
    char magic[5];
    in.read(magic, 5);
    if (!in || std::memcmp(magic, kMagic, 5) != 0) {
        throw ValidationError("checkpoint " + path + ": bad magic (not a FVGAN file)");
    }
    const uint16_t version = get_u16(in);
    if (version != kVersion) {
        throw ValidationError("checkpoint " + path + ": unsupported format version " +
                              std::to_string(version));
    }
    const uint64_t cfg_len = get_u64(in);
    std::string cfg_text(cfg_len, '\0');
    in.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len));

    Checkpoint ckpt;
    ckpt.config = model_config_from_text(cfg_text);

    const uint64_t count = get_u64(in);
    LayerParams flat;
    for (uint64_t i = 0; i < count; ++i) {
        const uint64_t name_len = get_u64(in);
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        const uint64_t rank = get_u64(in);
        Shape shape(rank);
        for (uint64_t d = 0; d < rank; ++d) shape[d] = get_u64(in);
        Tensor t(shape);
        for (size_t j = 0; j < t.numel(); ++j) t[j] = get_f64(in);
        if (!in) throw IoError("checkpoint " + path + ": truncated tensor record " + name);
        if (name.rfind("opt.", 0) == 0 || name.rfind("train.", 0) == 0) {
            ckpt.extras.emplace(name, std::move(t));
        } else if (name.rfind("predictor.", 0) == 0) {
            ckpt.params.theta_p.add(name, std::move(t));
        } else if (name.rfind("adversary.", 0) == 0) {
            ckpt.params.theta_a.add(name, std::move(t));
        } else {
            ckpt.params.theta_f.add(name, std::move(t));
        }
    }
    return ckpt;
}

}  // namespace fairvit
