#include "itect/itect.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "itect/error.hpp"
#include "itect/parallel.hpp"

namespace itect {
namespace {

using json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

Verdict itect_classify(std::span<const std::uint8_t> data, const EntsDetector& ents, const SlammDetector& slamm,
                       std::string digest) {
    Verdict v;
    v.digest = std::move(digest);

    auto t0 = Clock::now();
    if (data.size() < ents.params.chunk_size) {
        v.ents_abstained = true;
    } else {
        const auto profile = ents::entropy_profile(data, ents.params);
        const auto row = ents::project(profile.values, ents.forest.feature_cols);
        v.ents_score = forest::score(ents.forest, row);
        v.ents_verdict = forest::predict(ents.forest, row);
    }
    v.timings.ents_ms = ms_since(t0);

    t0 = Clock::now();
    v.slamm = slamm::slamm_classify(data, slamm.malware, slamm.benign);
    v.timings.slamm_ms = ms_since(t0);

    v.itect_verdict = v.ents_verdict || v.slamm.overall;
    return v;
}

std::optional<Verdict> classify_file(const std::filesystem::path& p, const EntsDetector& ents,
                                     const SlammDetector& slamm, Diagnostics* diag) {
    std::vector<std::uint8_t> bytes;
    try {
        bytes = corpus::read_file(p);
    } catch (const std::exception& e) {
        if (diag) diag->report(Severity::error, "unreadable-file", e.what(), p.generic_string());
        return std::nullopt;
    }
    auto v = itect_classify(bytes, ents, slamm, corpus::sha256_hex(bytes));
    v.path = p.generic_string();
    if (diag) {
        if (v.ents_abstained)
            diag->report(Severity::info, "ents-abstained", "file shorter than one chunk", v.path);
        if (v.slamm.abstained)
            diag->report(Severity::info, "slamm-abstained", "file shorter than the n-gram order", v.path);
    }
    return v;
}

std::vector<Verdict> classify_files(std::span<const std::string> paths, const EntsDetector& ents,
                                    const SlammDetector& slamm, Diagnostics* diag) {
    std::vector<std::optional<Verdict>> slots(paths.size());
    parallel_for(paths.size(), [&](std::size_t i) { slots[i] = classify_file(paths[i], ents, slamm, diag); });
    std::vector<Verdict> out;
    for (auto& s : slots)
        if (s) out.push_back(std::move(*s));
    return out;
}

Rates rates_from(const ConfusionCounts& c) {
    auto ratio = [](double num, double den, double fallback) { return den > 0 ? num / den : fallback; };
    Rates r;
    const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
    const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
    r.accuracy = ratio(tp + tn, static_cast<double>(c.total()), 0.0);
    r.precision = ratio(tp, tp + fp, 1.0);
    r.recall = ratio(tp, tp + fn, 0.0);
    r.fp_rate = ratio(fp, fp + tn, 0.0);
    r.fn_rate = ratio(fn, fn + tp, 0.0);
    return r;
}

namespace {

void tally(ConfusionCounts& c, bool predicted, bool actual) {
    if (predicted && actual)
        ++c.tp;
    else if (predicted)
        ++c.fp;
    else if (actual)
        ++c.fn;
    else
        ++c.tn;
}

}  // namespace

EvalReport evaluate(std::span<const LabelledPrediction> samples, bool with_roc) {
    EvalReport r;
    for (const auto& s : samples) {
        const bool actual = s.label == corpus::Label::malware;
        tally(r.counts, s.predicted_malware, actual);
        tally(r.per_category[std::string(corpus::to_string(s.category))], s.predicted_malware, actual);
    }
    r.rates = rates_from(r.counts);
    if (with_roc) {
        std::vector<double> scores;
        std::vector<bool> mal;
        for (const auto& s : samples) {
            scores.push_back(s.score);
            mal.push_back(s.label == corpus::Label::malware);
        }
        r.roc = forest::roc_points(scores, mal);
    }
    return r;
}

EvalReport evaluate(const std::vector<bool>& predicted, std::span<const corpus::Label> labels) {
    if (predicted.size() != labels.size()) throw Error("predictions and labels differ in length");
    std::vector<LabelledPrediction> s;
    for (std::size_t i = 0; i < predicted.size(); ++i) s.push_back({predicted[i], labels[i]});
    return evaluate(s);
}

DetectorReports evaluate_verdicts(std::span<const Verdict> verdicts, const corpus::CorpusManifest& manifest) {
    std::unordered_map<std::string, const corpus::ManifestEntry*> by_digest;
    for (const auto& e : manifest.entries) by_digest.emplace(e.digest, &e);

    std::vector<LabelledPrediction> it, en, sl;
    double wall = 0.0;
    for (const auto& v : verdicts) {
        auto found = by_digest.find(v.digest);
        if (found == by_digest.end()) throw Error("verdict for " + v.digest + " has no manifest entry");
        const auto& e = *found->second;
        it.push_back({v.itect_verdict, e.label, e.category, v.ents_score});
        en.push_back({v.ents_verdict, e.label, e.category, v.ents_score});
        sl.push_back({v.slamm.overall, e.label, e.category, v.slamm.overall ? 1.0 : 0.0});
        wall += v.timings.ents_ms + v.timings.slamm_ms;
    }
    DetectorReports r{evaluate(it), evaluate(en, true), evaluate(sl)};
    r.itect.wall_time_ms = wall;
    return r;
}

std::vector<SweepPoint> prevalence_sweep(std::span<const LabelledPrediction> pool, std::span<const double> fractions,
                                         std::uint64_t seed, std::size_t sample_size) {
    std::vector<std::size_t> mal, ben;
    for (std::size_t i = 0; i < pool.size(); ++i)
        (pool[i].label == corpus::Label::malware ? mal : ben).push_back(i);

    std::vector<double> sorted(fractions.begin(), fractions.end());
    std::sort(sorted.begin(), sorted.end());
    for (double f : sorted)
        if (!(f >= 0.0 && f <= 1.0)) throw Error("malware fractions must lie in [0, 1]", ErrorKind::usage);

    if (sample_size == 0) {
        double cap = static_cast<double>(pool.size());
        for (double f : sorted) {
            if (f < 1.0) cap = std::min(cap, static_cast<double>(ben.size()) / (1.0 - f));
            if (f > 0.0) cap = std::min(cap, static_cast<double>(mal.size()) / f);
        }
        sample_size = static_cast<std::size_t>(std::floor(cap + 1e-9));
    }
    if (sample_size == 0) throw Error("pool cannot supply any sweep sample");

    std::vector<SweepPoint> out;
    for (std::size_t k = 0; k < sorted.size(); ++k) {
        const double f = sorted[k];
        const auto n_mal = static_cast<std::size_t>(std::llround(f * static_cast<double>(sample_size)));
        const std::size_t n_ben = sample_size - n_mal;
        if (n_mal > mal.size() || n_ben > ben.size())
            throw Error("pool too small for a sample of " + std::to_string(sample_size) + " at fraction " +
                        std::to_string(f));
        std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ULL * (k + 1));
        auto m = mal, b = ben;
        std::shuffle(m.begin(), m.end(), rng);
        std::shuffle(b.begin(), b.end(), rng);
        std::vector<LabelledPrediction> sample;
        for (std::size_t i = 0; i < n_mal; ++i) sample.push_back(pool[m[i]]);
        for (std::size_t i = 0; i < n_ben; ++i) sample.push_back(pool[b[i]]);
        out.push_back({f, sample_size, evaluate(sample)});
    }
    return out;
}

double padding_cost(double high, double benign_avg, double padding) {
    if (!std::isfinite(high) || !std::isfinite(benign_avg) || !std::isfinite(padding))
        throw Error("padding cost needs finite entropies", ErrorKind::usage);
    if (!(padding <= benign_avg && benign_avg <= high))
        throw Error("padding cost needs padding <= benign average <= high entropy", ErrorKind::usage);
    if (benign_avg == padding) throw Error("infeasible: padding entropy equals benign average");
    return (high - benign_avg) / (benign_avg - padding);
}

// ---------------------------------------------------------------------------
// JSON

namespace {

json counts_json(const ConfusionCounts& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}}; }

json rates_json(const Rates& r) {
    return {{"accuracy", r.accuracy}, {"precision", r.precision}, {"recall", r.recall},
            {"fp_rate", r.fp_rate},   {"fn_rate", r.fn_rate}};
}

json report_json(const EvalReport& r) {
    json j;
    j["counts"] = counts_json(r.counts);
    const auto rates = rates_json(r.rates);
    for (auto it = rates.begin(); it != rates.end(); ++it) j[it.key()] = it.value();
    j["wall_time_ms"] = r.wall_time_ms;
    json cats = json::object();
    for (const auto& [name, c] : r.per_category) {
        auto cj = counts_json(c);
        const auto cr = rates_json(rates_from(c));
        for (auto it = cr.begin(); it != cr.end(); ++it) cj[it.key()] = it.value();
        cats[name] = cj;
    }
    j["per_category"] = cats;
    json roc = json::array();
    for (const auto& p : r.roc)
        roc.push_back({{"fp_budget", p.budget}, {"threshold", std::isinf(p.threshold) ? json("inf") : json(p.threshold)},
                       {"fp_rate", p.fp_rate}, {"tp_rate", p.tp_rate}});
    j["roc"] = roc;
    json ext = json::array();
    for (const auto& [name, rates] : r.external_engines) {
        auto e = rates_json(rates);
        e["engine"] = name;
        ext.push_back(e);
    }
    j["external_engines"] = ext;
    return j;
}

json scores_json(const slamm::ZooScores& s) {
    return {{"zoo", s.zoo_id}, {"cross_entropy", s.cross_entropy}, {"kld", s.kld}, {"mse", s.mse}};
}

slamm::ZooScores scores_from(const nlohmann::json& j) {
    return {j.at("zoo").get<std::string>(), j.at("cross_entropy").get<double>(), j.at("kld").get<double>(),
            j.at("mse").get<double>()};
}

}  // namespace

std::string report_to_json(const EvalReport& r) { return report_json(r).dump(2); }

std::string reports_to_json(const DetectorReports& r, const std::string& provenance) {
    json j;
    j["provenance"] = json::parse(provenance);
    j["itect"] = report_json(r.itect);
    j["ents"] = report_json(r.ents);
    j["slamm"] = report_json(r.slamm);
    return j.dump(2);
}

std::string verdict_to_json(const Verdict& v, bool with_timings) {
    json j;
    j["path"] = v.path;
    j["digest"] = v.digest;
    j["itect_verdict"] = v.itect_verdict;
    j["ents_verdict"] = v.ents_verdict;
    j["ents_score"] = v.ents_score;
    j["ents_abstained"] = v.ents_abstained;
    json s;
    s["cx"] = v.slamm.cx;
    s["cd"] = v.slamm.cd;
    s["cmse"] = v.slamm.cmse;
    s["overall"] = v.slamm.overall;
    s["abstained"] = v.slamm.abstained;
    s["benign"] = scores_json(v.slamm.benign);
    s["malware"] = json::array();
    for (const auto& m : v.slamm.malware) s["malware"].push_back(scores_json(m));
    j["slamm"] = s;
    if (with_timings) j["timings"] = {{"ents_ms", v.timings.ents_ms}, {"slamm_ms", v.timings.slamm_ms}};
    return j.dump();
}

Verdict verdict_from_json(const std::string& line) {
    try {
        const auto j = nlohmann::json::parse(line);
        Verdict v;
        v.path = j.at("path").get<std::string>();
        v.digest = j.at("digest").get<std::string>();
        v.itect_verdict = j.at("itect_verdict").get<bool>();
        v.ents_verdict = j.at("ents_verdict").get<bool>();
        v.ents_score = j.at("ents_score").get<double>();
        v.ents_abstained = j.at("ents_abstained").get<bool>();
        const auto& s = j.at("slamm");
        v.slamm.cx = s.at("cx").get<bool>();
        v.slamm.cd = s.at("cd").get<bool>();
        v.slamm.cmse = s.at("cmse").get<bool>();
        v.slamm.overall = s.at("overall").get<bool>();
        v.slamm.abstained = s.at("abstained").get<bool>();
        v.slamm.benign = scores_from(s.at("benign"));
        for (const auto& m : s.at("malware")) v.slamm.malware.push_back(scores_from(m));
        if (j.contains("timings")) {
            v.timings.ents_ms = j["timings"].at("ents_ms").get<double>();
            v.timings.slamm_ms = j["timings"].at("slamm_ms").get<double>();
        }
        return v;
    } catch (const nlohmann::json::exception& e) {
        throw Error(std::string("bad verdict record: ") + e.what());
    }
}

}  // namespace itect
