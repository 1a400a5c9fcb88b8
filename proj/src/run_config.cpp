#include "fairvit/run_config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace fairvit {

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as integer");
    }
}

double parse_f64(const std::string& key, const std::string& v) {
    try {
        return std::stod(v);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as number");
    }
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as bool");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
    // model
    if (key == "variant") model.variant = variant_from_name(value);
    else if (key == "image_size") {
        model.image_size = parse_u64(key, value);
        synth.image_size = model.image_size;
    }
    else if (key == "channels") model.channels = parse_u64(key, value);
    else if (key == "cnn_channels") {
        model.cnn_channels.clear();
        std::istringstream ss(value);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (!tok.empty()) model.cnn_channels.push_back(parse_u64(key, tok));
        }
        if (model.cnn_channels.empty()) throw ConfigError("config key 'cnn_channels': empty list");
    }
    else if (key == "patch") model.patch = parse_u64(key, value);
    else if (key == "d_vit") model.d_vit = parse_u64(key, value);
    else if (key == "vit_depth") model.vit_depth = parse_u64(key, value);
    else if (key == "heads") model.heads = parse_u64(key, value);
    else if (key == "vit_mlp_hidden") model.vit_mlp_hidden = parse_u64(key, value);
    else if (key == "head_hidden") model.head_hidden = parse_u64(key, value);
    else if (key == "head_hidden_layers") model.head_hidden_layers = parse_u64(key, value);
    else if (key == "dropout") model.dropout = parse_f64(key, value);
    else if (key == "attr_classes") model.attr_classes = parse_u64(key, value);
    // train
    else if (key == "lr") train.lr = parse_f64(key, value);
    else if (key == "batch") train.batch = parse_u64(key, value);
    else if (key == "epochs") train.epochs = parse_u64(key, value);
    else if (key == "lambda") {
        train.lambda = parse_f64(key, value);
        model.grl_lambda = train.lambda;
    }
    else if (key == "seed") train.seed = parse_u64(key, value);
    else if (key == "optimizer") train.optimizer = optimizer_from_name(value);
    else if (key == "adam_beta1") train.beta1 = parse_f64(key, value);
    else if (key == "adam_beta2") train.beta2 = parse_f64(key, value);
    else if (key == "adam_eps") train.adam_eps = parse_f64(key, value);
    else if (key == "augment") train.augment = parse_bool(key, value);
    else if (key == "literal_updates") train.literal_updates = parse_bool(key, value);
    // synth
    else if (key == "synth_n") synth.n = parse_u64(key, value);
    else if (key == "synth_local_weight") synth.local_cue_weight = parse_f64(key, value);
    else if (key == "synth_global_weight") synth.global_cue_weight = parse_f64(key, value);
    else if (key == "synth_group_offset") synth.group_offset = parse_f64(key, value);
    else if (key == "synth_noise") synth.cue_noise = parse_f64(key, value);
    else if (key == "synth_seed") synth.seed = parse_u64(key, value);
    // probe
    else if (key == "probe_hidden") probe.hidden = parse_u64(key, value);
    else if (key == "probe_epochs") probe.epochs = parse_u64(key, value);
    else if (key == "probe_lr") probe.lr = parse_f64(key, value);
    else if (key == "probe_seed") probe.seed = parse_u64(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    RunConfig cfg;
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        while (!line.empty() && (line.back() == ' ' || line.back() == '\t' || line.back() == '\r')) {
            line.pop_back();
        }
        size_t start = line.find_first_not_of(" \t");
        if (start == std::string::npos) continue;
        line = line.substr(start);
        const size_t eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        cfg.set(line.substr(0, eq), line.substr(eq + 1));
    }
    return cfg;
}

std::string RunConfig::to_text() const {
    std::map<std::string, std::string> kv;
    kv["variant"] = variant_name(model.variant);
    kv["image_size"] = std::to_string(model.image_size);
    kv["channels"] = std::to_string(model.channels);
    std::string chans;
    for (size_t i = 0; i < model.cnn_channels.size(); ++i) {
        if (i) chans += ",";
        chans += std::to_string(model.cnn_channels[i]);
    }
    kv["cnn_channels"] = chans;
    kv["patch"] = std::to_string(model.patch);
    kv["d_vit"] = std::to_string(model.d_vit);
    kv["vit_depth"] = std::to_string(model.vit_depth);
    kv["heads"] = std::to_string(model.heads);
    kv["vit_mlp_hidden"] = std::to_string(model.vit_mlp_hidden);
    kv["head_hidden"] = std::to_string(model.head_hidden);
    kv["head_hidden_layers"] = std::to_string(model.head_hidden_layers);
    kv["dropout"] = fmt_double(model.dropout);
    kv["attr_classes"] = std::to_string(model.attr_classes);
    kv["lr"] = fmt_double(train.lr);
    kv["batch"] = std::to_string(train.batch);
    kv["epochs"] = std::to_string(train.epochs);
    kv["lambda"] = fmt_double(train.lambda);
    kv["seed"] = std::to_string(train.seed);
    kv["optimizer"] = optimizer_name(train.optimizer);
    kv["adam_beta1"] = fmt_double(train.beta1);
    kv["adam_beta2"] = fmt_double(train.beta2);
    kv["adam_eps"] = fmt_double(train.adam_eps);
    kv["augment"] = train.augment ? "true" : "false";
    kv["literal_updates"] = train.literal_updates ? "true" : "false";
    kv["synth_n"] = std::to_string(synth.n);
    kv["synth_local_weight"] = fmt_double(synth.local_cue_weight);
    kv["synth_global_weight"] = fmt_double(synth.global_cue_weight);
    kv["synth_group_offset"] = fmt_double(synth.group_offset);
    kv["synth_noise"] = fmt_double(synth.cue_noise);
    kv["synth_seed"] = std::to_string(synth.seed);
    kv["probe_hidden"] = std::to_string(probe.hidden);
    kv["probe_epochs"] = std::to_string(probe.epochs);
    kv["probe_lr"] = fmt_double(probe.lr);
    kv["probe_seed"] = std::to_string(probe.seed);
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    synth.validate();
    probe.validate();
    if (model.has_adversary() && model.grl_lambda != train.lambda) {
        throw ConfigError("config: lambda mismatch between model and trainer");
    }
}

}  // namespace fairvit
