#include "fairvit/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "fairvit/nn.hpp"

namespace fairvit {

void ProbeConfig::validate() const {
    if (hidden == 0 || epochs == 0 || lr <= 0.0) {
        throw ValidationError("probe config: hidden, epochs and lr must be positive");
    }
}

namespace {

void check_lengths(const std::vector<double>& a, const std::vector<double>& b, const char* op) {
    if (a.size() != b.size() || a.empty()) {
        throw ShapeError(std::string(op) + ": lengths " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
}

}  // namespace

double pearson(const std::vector<double>& pred, const std::vector<double>& target) {
    check_lengths(pred, target, "pearson");
    const size_t n = pred.size();
    if (n < 2) throw ValidationError("pearson: need at least 2 points");
    double mx = 0.0, my = 0.0;
    for (size_t i = 0; i < n; ++i) {
        mx += pred[i];
        my += target[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < n; ++i) {
        const double dx = pred[i] - mx, dy = target[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) {
        throw DomainError("pearson: correlation undefined for constant input");
    }
    return sxy / std::sqrt(sxx * syy);
}

double mae(const std::vector<double>& pred, const std::vector<double>& target) {
    check_lengths(pred, target, "mae");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
    return s / static_cast<double>(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& target) {
    check_lengths(pred, target, "rmse");
    double s = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = pred[i] - target[i];
        s += d * d;
    }
    return std::sqrt(s / static_cast<double>(pred.size()));
}

std::pair<std::map<int, double>, double> performance_gap(const std::vector<PredRow>& rows) {
    std::map<int, double> sums;
    std::map<int, size_t> counts;
    for (const PredRow& r : rows) {
        sums[r.attr] += std::fabs(r.pred - r.y);
        counts[r.attr] += 1;
    }
    if (counts.size() < 2 || counts.count(0) == 0 || counts.count(1) == 0) {
        throw ValidationError("performance_gap: both attribute groups must be non-empty");
    }
    std::map<int, double> group_mae;
    for (const auto& [g, s] : sums) group_mae[g] = s / static_cast<double>(counts[g]);
    const double gap = std::fabs(group_mae[0] - group_mae[1]);
    return {group_mae, gap};
}

double probe_accuracy(const Tensor& features, const std::vector<int>& attrs, const ProbeConfig& cfg) {
    cfg.validate();
    if (features.rank() != 2 || features.dim(0) != attrs.size()) {
        throw ShapeError("probe: features " + shape_str(features.shape()) + " do not match " +
                         std::to_string(attrs.size()) + " attribute labels");
    }
    const size_t n = features.dim(0), d = features.dim(1);
    int max_attr = 0;
    for (int a : attrs) max_attr = std::max(max_attr, a);
    const size_t classes = static_cast<size_t>(max_attr) + 1;
    if (classes < 2) throw ValidationError("probe: need at least two attribute classes");
    if (n < 2 * classes) throw ValidationError("probe: need at least 2 samples per class");

    // stratified 70/30 split
    std::vector<std::vector<size_t>> by_class(classes);
    for (size_t i = 0; i < n; ++i) by_class[static_cast<size_t>(attrs[i])].push_back(i);
    Rng rng(mix_seed(cfg.seed, 0x9B0BEULL));
    std::vector<size_t> train_idx, test_idx;
    for (auto& idx : by_class) {
        if (idx.size() < 2) throw ValidationError("probe: degenerate split, a class has < 2 samples");
        for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(i)]);
        size_t n_train = (idx.size() * 7) / 10;
        n_train = std::clamp<size_t>(n_train, 1, idx.size() - 1);
        for (size_t i = 0; i < idx.size(); ++i) {
            (i < n_train ? train_idx : test_idx).push_back(idx[i]);
        }
    }

    // standardize with training statistics
    std::vector<double> mu(d, 0.0), sd(d, 0.0);
    for (size_t i : train_idx) {
        for (size_t j = 0; j < d; ++j) mu[j] += features[i * d + j];
    }
    for (size_t j = 0; j < d; ++j) mu[j] /= static_cast<double>(train_idx.size());
    for (size_t i : train_idx) {
        for (size_t j = 0; j < d; ++j) {
            const double v = features[i * d + j] - mu[j];
            sd[j] += v * v;
        }
    }
    for (size_t j = 0; j < d; ++j) {
        sd[j] = std::sqrt(sd[j] / static_cast<double>(train_idx.size()));
        if (sd[j] < 1e-8) sd[j] = 1.0;
    }
    auto standardized = [&](const std::vector<size_t>& idx) {
        Tensor x({idx.size(), d});
        for (size_t r = 0; r < idx.size(); ++r) {
            for (size_t j = 0; j < d; ++j) x[r * d + j] = (features[idx[r] * d + j] - mu[j]) / sd[j];
        }
        return x;
    };
    Tensor x_train = standardized(train_idx);
    Tensor x_test = standardized(test_idx);
    Tensor onehot({train_idx.size(), classes});
    for (size_t r = 0; r < train_idx.size(); ++r) {
        onehot[r * classes + static_cast<size_t>(attrs[train_idx[r]])] = 1.0;
    }

    // one-hidden-layer classifier, full-batch gradient descent
    Rng init(mix_seed(cfg.seed, 0x9B0BFULL));
    const size_t h = cfg.hidden;
    Tensor w1 = Tensor::uniform({d, h}, init, -1.0 / std::sqrt(static_cast<double>(d)),
                                1.0 / std::sqrt(static_cast<double>(d)));
    Tensor b1 = Tensor::zeros({h});
    Tensor w2 = Tensor::uniform({h, classes}, init, -1.0 / std::sqrt(static_cast<double>(h)),
                                1.0 / std::sqrt(static_cast<double>(h)));
    Tensor b2 = Tensor::zeros({classes});

    for (size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Tape tape;
        Tensor tw1 = tape.leaf(w1), tb1 = tape.leaf(b1), tw2 = tape.leaf(w2), tb2 = tape.leaf(b2);
        Tensor hidden = nn::relu(tape, nn::linear(tape, tape.leaf(x_train, false), tw1, tb1));
        Tensor logits = nn::linear(tape, hidden, tw2, tb2);
        Tensor loss = nn::cross_entropy_loss(tape, logits, tape.leaf(onehot, false));
        GradientMap g = tape.backward(loss);
        auto step = [&](Tensor& p, const Tensor& onto) {
            const Tensor& grad = g.at(onto.node());
            for (size_t i = 0; i < p.numel(); ++i) p[i] -= cfg.lr * grad[i];
        };
        step(w1, tw1);
        step(b1, tb1);
        step(w2, tw2);
        step(b2, tb2);
    }

    // held-out accuracy
    Tape tape;
    Tensor hidden = nn::relu(tape, nn::linear(tape, tape.leaf(x_test, false), tape.leaf(w1, false),
                                              tape.leaf(b1, false)));
    Tensor logits = nn::linear(tape, hidden, tape.leaf(w2, false), tape.leaf(b2, false));
    size_t correct = 0;
    for (size_t r = 0; r < test_idx.size(); ++r) {
        size_t best = 0;
        for (size_t j = 1; j < classes; ++j) {
            if (logits[r * classes + j] > logits[r * classes + best]) best = j;
        }
        if (static_cast<int>(best) == attrs[test_idx[r]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(test_idx.size());
}

double bias_reduction(double gap_baseline, double gap_fair) {
    if (gap_baseline <= 0.0) {
        throw DomainError("bias_reduction: undefined for baseline gap " + std::to_string(gap_baseline));
    }
    return 100.0 * (gap_baseline - gap_fair) / gap_baseline;
}

MetricsReport compute_metrics(const std::vector<PredRow>& rows, const Tensor& features,
                              const ProbeConfig& probe_cfg,
                              std::optional<double> inline_adversary_accuracy) {
    if (rows.empty()) throw ValidationError("compute_metrics: no evaluation rows");
    std::vector<double> preds, targets;
    std::vector<int> attrs;
    preds.reserve(rows.size());
    for (const PredRow& r : rows) {
        preds.push_back(r.pred);
        targets.push_back(r.y);
        attrs.push_back(r.attr);
    }
    MetricsReport rep;
    rep.pc = pearson(preds, targets);
    rep.mae = mae(preds, targets);
    rep.rmse = rmse(preds, targets);
    auto [group_mae, gap] = performance_gap(rows);
    rep.group_mae = group_mae;
    rep.performance_gap = gap;
    rep.probe_accuracy = probe_accuracy(features, attrs, probe_cfg);
    rep.inline_adversary_accuracy = inline_adversary_accuracy;
    for (const PredRow& r : rows) rep.n_per_group[r.attr] += 1;
    return rep;
}

std::string metrics_to_json(const MetricsReport& r) {
    nlohmann::json j;
    j["pc"] = r.pc;
    j["mae"] = r.mae;
    j["rmse"] = r.rmse;
    nlohmann::json gm = nlohmann::json::object();
    for (const auto& [g, v] : r.group_mae) gm[std::to_string(g)] = v;
    j["group_mae"] = gm;
    j["performance_gap"] = r.performance_gap;
    j["probe_accuracy"] = r.probe_accuracy;
    if (r.inline_adversary_accuracy) j["inline_adversary_accuracy"] = *r.inline_adversary_accuracy;
    nlohmann::json np = nlohmann::json::object();
    for (const auto& [g, v] : r.n_per_group) np[std::to_string(g)] = v;
    j["n_per_group"] = np;
    return j.dump(2);
}

MetricsReport metrics_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("metrics json: parse failure: ") + e.what());
    }
    MetricsReport r;
    for (const char* key : {"pc", "mae", "rmse", "group_mae", "performance_gap", "probe_accuracy"}) {
        if (!j.contains(key)) throw ValidationError(std::string("metrics json: missing key '") + key + "'");
    }
    r.pc = j["pc"].get<double>();
    r.mae = j["mae"].get<double>();
    r.rmse = j["rmse"].get<double>();
    for (const auto& [k, v] : j["group_mae"].items()) r.group_mae[std::stoi(k)] = v.get<double>();
    r.performance_gap = j["performance_gap"].get<double>();
    r.probe_accuracy = j["probe_accuracy"].get<double>();
    if (j.contains("inline_adversary_accuracy")) {
        r.inline_adversary_accuracy = j["inline_adversary_accuracy"].get<double>();
    }
    if (j.contains("n_per_group")) {
        for (const auto& [k, v] : j["n_per_group"].items()) r.n_per_group[std::stoi(k)] = v.get<size_t>();
    }
    return r;
}

}  // namespace fairvit
