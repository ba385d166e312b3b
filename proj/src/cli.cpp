#include "itect/cli.hpp"

#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "itect/baselines.hpp"
#include "itect/corpus.hpp"
#include "itect/diagnostics.hpp"
#include "itect/ents.hpp"
#include "itect/error.hpp"
#include "itect/forest.hpp"
#include "itect/itect.hpp"
#include "itect/parallel.hpp"
#include "itect/pipeline.hpp"
#include "itect/slamm.hpp"
#include "itect/synth.hpp"
#include "itect/version.hpp"

namespace itect::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("cannot open " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + p.string());
    out << text;
    if (!out) throw Error("write failed on " + p.string());
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

/// Tool version, effective configuration and digests of every input file.
class Provenance {
public:
    Provenance(const CLI::App& root, const CLI::App& sub) : command_(sub.get_name()) {
        // Keep global options and the active subcommand's section only.
        std::istringstream all(root.config_to_str(true, false));
        const std::string prefix = command_ + ".";
        for (std::string line; std::getline(all, line);) {
            const auto eq = line.find('=');
            const auto key = line.substr(0, eq);
            if (key.find('.') != std::string::npos && key.rfind(prefix, 0) != 0) continue;
            // An unset list option serialises as "", which would read back as one empty item.
            const auto* opt = key.rfind(prefix, 0) == 0 ? sub.get_option_no_throw(key.substr(prefix.size())) : nullptr;
            if (opt && opt->get_items_expected_max() > 1 && opt->count() == 0) continue;
            config_ += line + "\n";
        }
    }

    void input(const fs::path& p) {
        try {
            inputs_.emplace_back(p.generic_string(), corpus::sha256_hex(corpus::read_file(p)));
        } catch (const std::exception&) {
            inputs_.emplace_back(p.generic_string(), "unreadable");
        }
    }

    [[nodiscard]] json to_json() const {
        json j;
        j["tool"] = "itect";
        j["version"] = kVersion;
        j["command"] = command_;
        j["config"] = config_;
        json in = json::array();
        for (const auto& [p, d] : inputs_) in.push_back({{"path", p}, {"digest", d}});
        j["inputs"] = in;
        return j;
    }
    [[nodiscard]] std::string str() const { return to_json().dump(); }

private:
    std::string command_;
    std::string config_;
    std::vector<std::pair<std::string, std::string>> inputs_;
};

std::string with_provenance_line(const Provenance& p) { return json{{"provenance", p.to_json()}}.dump() + "\n"; }

std::vector<std::string> read_jsonl_records(const fs::path& p) {
    std::ifstream in(p);
    if (!in) throw Error("cannot open " + p.string());
    std::vector<std::string> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        if (line.rfind("{\"provenance\"", 0) == 0) continue;
        out.push_back(line);
    }
    return out;
}

corpus::CorpusManifest load_manifest_checked(const fs::path& p) {
    if (!fs::exists(p)) throw Error("manifest not found: " + p.string());
    return corpus::load_manifest(p);
}

std::vector<Verdict> load_verdicts(const fs::path& p) {
    std::vector<Verdict> out;
    for (const auto& line : read_jsonl_records(p)) out.push_back(verdict_from_json(line));
    return out;
}

SlammDetector load_slamm(const std::vector<std::string>& malware_paths, const std::string& benign_path,
                         Provenance& prov) {
    if (malware_paths.empty()) throw Error("at least one malware model is required", ErrorKind::usage);
    SlammDetector d;
    for (const auto& p : malware_paths) {
        prov.input(p);
        d.malware.push_back(slamm::ZooModel::from(slamm::load_model(p)));
    }
    prov.input(benign_path);
    d.benign = slamm::ZooModel::from(slamm::load_model(benign_path));
    return d;
}

std::vector<double> default_fractions() {
    std::vector<double> f;
    for (int i = 0; i <= 10; ++i) f.push_back(0.05 * i);
    return f;
}

struct Context {
    CLI::App& root;
    std::ostream& out;
    Diagnostics& diag;
};

// ---------------------------------------------------------------------------

void add_ingest(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("ingest", "Inventory a directory of files into a manifest");
    auto root = std::make_shared<std::string>();
    auto label = std::make_shared<std::string>("malware");
    auto category = std::make_shared<std::string>("unknown");
    auto out = std::make_shared<std::string>();
    sub->add_option("--root", *root, "Directory to scan recursively")->required();
    sub->add_option("--label", *label, "malware|benign")->capture_default_str();
    sub->add_option("--category", *category, "polymorphic|metamorphic|packed|benign|unknown")->capture_default_str();
    sub->add_option("--out", *out, "Manifest (JSON Lines) to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        const auto m = corpus::scan_directory(*root, corpus::parse_label(*label), corpus::parse_category(*category),
                                              &ctx.diag);
        std::ostringstream ss;
        ss << with_provenance_line(prov);
        corpus::write_manifest(ss, m);
        write_text(*out, ss.str());
    });
}

void add_split(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("split", "Assign stratified train/validation/test splits");
    auto manifest = std::make_shared<std::string>();
    auto train = std::make_shared<double>(2.0 / 3.0);
    auto seed = std::make_shared<std::uint64_t>(0);
    auto validation = std::make_shared<double>(0.0);
    auto by_category = std::make_shared<bool>(false);
    auto out = std::make_shared<std::string>();
    sub->add_option("--manifest", *manifest, "Manifest to split")->required();
    sub->add_option("--train", *train, "Train fraction per label")->capture_default_str();
    sub->add_option("--seed", *seed, "Shuffle seed")->capture_default_str();
    sub->add_option("--validation", *validation, "Share of the remainder used for validation")->capture_default_str();
    sub->add_flag("--by-category", *by_category, "Stratify by label and category");
    sub->add_option("--out", *out, "Output manifest (default: overwrite input)");
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*manifest);
        const auto m = load_manifest_checked(*manifest);
        const auto s = corpus::split_manifest(m, *train, *seed, {*validation, *by_category});
        std::ostringstream ss;
        ss << with_provenance_line(prov);
        corpus::write_manifest(ss, s);
        write_text(out->empty() ? *manifest : *out, ss.str());
    });
}

void add_ents(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("ents", "Compute entropy-time-series features");
    auto manifest = std::make_shared<std::string>();
    auto alpha = std::make_shared<std::string>("auto");
    auto chunk = std::make_shared<std::size_t>(256);
    auto tau = std::make_shared<double>(0.5);
    auto split = std::make_shared<std::string>("all");
    auto out = std::make_shared<std::string>();
    auto params_out = std::make_shared<std::string>();
    auto profiles_out = std::make_shared<std::string>();
    sub->add_option("--manifest", *manifest, "Manifest of files")->required();
    sub->add_option("--alpha", *alpha, "auto or profile length exponent")->capture_default_str();
    sub->add_option("--chunk", *chunk, "Chunk size in bytes")->capture_default_str();
    sub->add_option("--tau", *tau, "Denoising threshold")->capture_default_str();
    sub->add_option("--split", *split, "all|train|validation|test")->capture_default_str();
    sub->add_option("--out", *out, "Feature CSV to write")->required();
    sub->add_option("--params-out", *params_out, "Parameter JSON (default: <out stem>.params.json)");
    sub->add_option("--profiles-out", *profiles_out, "Optional JSON Lines of per-file profiles");
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*manifest);
        const auto m = load_manifest_checked(*manifest);
        ents::EntsParams params{*chunk, 1, *tau};
        if (*alpha == "auto") {
            // Alpha comes from the training zoos when the manifest is split.
            auto train_rows = m.select(corpus::Split::train);
            corpus::CorpusManifest basis;
            basis.entries = train_rows.empty() ? m.entries : train_rows;
            params.alpha = ents::compute_alpha(basis, *chunk);
        } else {
            try {
                params.alpha = static_cast<unsigned>(std::stoul(*alpha));
            } catch (const std::exception&) {
                throw Error("--alpha must be 'auto' or a positive integer", ErrorKind::usage);
            }
        }
        params.validate();
        std::vector<corpus::ManifestEntry> rows =
            *split == "all" ? m.entries : m.select(corpus::parse_split(*split));
        const auto matrix = pipeline::ents_features(rows, params, &ctx.diag);

        std::ostringstream csv;
        ents::write_feature_csv(csv, matrix, "provenance " + prov.str());
        write_text(*out, csv.str());

        fs::path pp = params_out->empty() ? fs::path(*out).replace_extension(".params.json") : fs::path(*params_out);
        json pj;
        pj["provenance"] = prov.to_json();
        pj["params"] = json::parse(ents::params_to_json(params));
        write_text(pp, pj.dump(2) + "\n");

        if (!profiles_out->empty()) {
            std::string lines = with_provenance_line(prov);
            for (std::size_t r = 0; r < matrix.rows; ++r) {
                const auto row = matrix.row(r);
                lines += ents::profile_to_json({{row.begin(), row.end()}, matrix.row_ids[r], params}) + "\n";
            }
            write_text(*profiles_out, lines);
        }
    });
}

void add_slamm_train(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("slamm-train", "Train one byte n-gram zoo model");
    auto manifest = std::make_shared<std::string>();
    auto category = std::make_shared<std::string>();
    auto n = std::make_shared<unsigned>(3);
    auto discount = std::make_shared<double>(0.5);
    auto floor = std::make_shared<double>(1e-10);
    auto split = std::make_shared<std::string>("train");
    auto out = std::make_shared<std::string>();
    sub->add_option("--manifest", *manifest, "Manifest of files")->required();
    sub->add_option("--category", *category, "Zoo category (benign selects the benign zoo)")->required();
    sub->add_option("--n", *n, "n-gram order")->capture_default_str();
    sub->add_option("--discount", *discount, "Absolute discount")->capture_default_str();
    sub->add_option("--floor", *floor, "Probability of events unseen at every order")->capture_default_str();
    sub->add_option("--split", *split, "all|train|validation|test")->capture_default_str();
    sub->add_option("--out", *out, "Model file to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*manifest);
        const auto m = load_manifest_checked(*manifest);
        const auto cat = corpus::parse_category(*category);
        std::optional<corpus::Split> s;
        if (*split != "all") s = corpus::parse_split(*split);
        const auto rows = cat == corpus::Category::benign ? m.select(s, corpus::Label::benign)
                                                          : m.select(s, corpus::Label::malware, cat);
        const auto model = slamm::train_model(rows, *n, {*discount, *floor}, *category, &ctx.diag);
        slamm::save_model(*out, model, prov.str());
    });
}

void add_slamm_classify(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("slamm-classify", "Classify files with SLaMM alone");
    auto models = std::make_shared<std::string>();
    auto benign = std::make_shared<std::string>();
    auto files = std::make_shared<std::vector<std::string>>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--models", *models, "Comma-separated malware zoo models")->required();
    sub->add_option("--benign", *benign, "Benign zoo model")->required();
    sub->add_option("--out", *out, "JSON Lines output (default: stdout)");
    sub->add_option("files", *files, "Files to classify")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        const auto d = load_slamm(split_list(*models), *benign, prov);
        std::vector<std::optional<std::string>> lines(files->size());
        parallel_for(files->size(), [&](std::size_t i) {
            std::vector<std::uint8_t> bytes;
            try {
                bytes = corpus::read_file((*files)[i]);
            } catch (const std::exception& e) {
                ctx.diag.report(Severity::error, "unreadable-file", e.what(), (*files)[i]);
                return;
            }
            const auto v = slamm::slamm_classify(bytes, d.malware, d.benign);
            json j;
            j["path"] = (*files)[i];
            j["digest"] = corpus::sha256_hex(bytes);
            j["cx"] = v.cx;
            j["cd"] = v.cd;
            j["cmse"] = v.cmse;
            j["overall"] = v.overall;
            j["abstained"] = v.abstained;
            lines[i] = j.dump();
        });
        std::string text = with_provenance_line(prov);
        for (const auto& l : lines)
            if (l) text += *l + "\n";
        if (out->empty())
            ctx.out << text;
        else
            write_text(*out, text);
    });
}

void add_train(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("train", "Train and zero-FP calibrate the EnTS forest");
    auto features = std::make_shared<std::string>();
    auto cfg = std::make_shared<forest::ForestConfig>();
    auto folds = std::make_shared<std::size_t>(10);
    auto cutoff = std::make_shared<double>(0.8);
    auto out = std::make_shared<std::string>();
    sub->add_option("--features", *features, "Feature CSV of training rows")->required();
    sub->add_option("--trees", cfg->trees, "Number of trees")->capture_default_str();
    sub->add_option("--fpweight", cfg->class_weight_fp, "Weight of benign rows (false-positive penalty)")
        ->capture_default_str();
    sub->add_option("--max-depth", cfg->max_depth, "Maximum depth (0 = unlimited)")->capture_default_str();
    sub->add_option("--min-leaf", cfg->min_leaf, "Minimum rows per leaf")->capture_default_str();
    sub->add_option("--seed", cfg->seed, "Seed")->capture_default_str();
    sub->add_option("--folds", *folds, "Calibration folds")->capture_default_str();
    sub->add_option("--corr-cutoff", *cutoff, "Pearson cutoff for column pruning")->capture_default_str();
    sub->add_option("--out", *out, "Forest JSON to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*features);
        std::ifstream in(*features);
        if (!in) throw Error("cannot open " + *features);
        const auto matrix = ents::read_feature_csv(in);
        const auto pruned = ents::prune_correlated(matrix, *cutoff);
        const auto forest = forest::calibrate_zero_fp(pruned, *cfg, *folds);
        forest::save_forest(*out, forest, prov.str());
    });
}

void add_baseline(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("baseline", "Compression-rate or NCD features");
    auto mode = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto train = std::make_shared<std::string>();
    auto spec = std::make_shared<baselines::CompressorSpec>();
    auto out = std::make_shared<std::string>();
    auto max_pairs = std::make_shared<std::size_t>(2'000'000);
    sub->add_option("mode", *mode, "cr|ncd")->required()->check(CLI::IsMember({"cr", "ncd"}));
    sub->add_option("--manifest", *manifest, "Rows to featurize")->required();
    sub->add_option("--train", *train, "Manifest of NCD reference files (default: train split of --manifest)");
    sub->add_option("--algorithm", spec->algorithm_id, "lzma2|zlib")->capture_default_str();
    sub->add_option("--level", spec->level, "Compression level")->capture_default_str();
    sub->add_option("--max-pairs", *max_pairs, "Refuse NCD jobs larger than this many pairs")->capture_default_str();
    sub->add_option("--out", *out, "Feature CSV to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*manifest);
        const auto m = load_manifest_checked(*manifest);
        auto load = [&](const std::vector<corpus::ManifestEntry>& rows) {
            std::vector<baselines::NamedBytes> v(rows.size());
            parallel_for(rows.size(), [&](std::size_t i) { v[i] = {rows[i].digest, corpus::read_file(rows[i].path)}; });
            return v;
        };
        ents::FeatureMatrix matrix;
        if (*mode == "cr") {
            const auto comp = baselines::make_compressor(*spec);
            std::vector<double> rates(m.entries.size());
            parallel_for(m.entries.size(), [&](std::size_t i) {
                rates[i] = baselines::compression_rate(corpus::read_file(m.entries[i].path), *comp);
            });
            for (std::size_t i = 0; i < rates.size(); ++i)
                matrix.append_row(std::span<const double>(&rates[i], 1), m.entries[i].digest, m.entries[i].label);
        } else {
            std::vector<corpus::ManifestEntry> ref;
            if (train->empty()) {
                ref = m.select(corpus::Split::train);
            } else {
                prov.input(*train);
                ref = load_manifest_checked(*train).entries;
            }
            if (m.entries.size() * ref.size() > *max_pairs)
                throw Error("NCD job of " + std::to_string(m.entries.size() * ref.size()) +
                            " pairs exceeds --max-pairs");
            matrix = baselines::similarity_rows(load(m.entries), load(ref), *spec);
            for (const auto& e : m.entries) matrix.labels.push_back(e.label);
        }
        std::ostringstream csv;
        ents::write_feature_csv(csv, matrix, "provenance " + prov.str());
        write_text(*out, csv.str());
    });
}

void add_classify(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("classify", "Classify files with the combined detector");
    auto ents_path = std::make_shared<std::string>();
    auto params_path = std::make_shared<std::string>();
    auto models = std::make_shared<std::string>();
    auto benign = std::make_shared<std::string>();
    auto files = std::make_shared<std::vector<std::string>>();
    auto manifest = std::make_shared<std::string>();
    auto split = std::make_shared<std::string>("test");
    auto out = std::make_shared<std::string>();
    auto timings = std::make_shared<bool>(false);
    sub->add_option("--ents", *ents_path, "Calibrated forest JSON")->required();
    sub->add_option("--ents-params", *params_path, "EnTS parameter JSON")->required();
    sub->add_option("--slamm", *models, "Comma-separated malware zoo models")->required();
    sub->add_option("--benign", *benign, "Benign zoo model")->required();
    sub->add_option("--manifest", *manifest, "Classify the rows of this manifest instead of listed files");
    sub->add_option("--split", *split, "Split of --manifest to classify (all|train|validation|test)")
        ->capture_default_str();
    sub->add_option("--out", *out, "Verdict JSON Lines to write")->required();
    sub->add_flag("--timings", *timings, "Record per-stage wall times in verdicts");
    sub->add_option("files", *files, "Files to classify");
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*ents_path);
        prov.input(*params_path);
        EntsDetector ed{forest::load_forest(*ents_path), ents::params_from_json(read_text(*params_path))};
        const auto sd = load_slamm(split_list(*models), *benign, prov);
        std::vector<std::string> paths = *files;
        if (!manifest->empty()) {
            prov.input(*manifest);
            const auto m = load_manifest_checked(*manifest);
            const auto rows = *split == "all" ? m.entries : m.select(corpus::parse_split(*split));
            for (const auto& e : rows) paths.push_back(e.path);
        }
        if (paths.empty()) throw Error("nothing to classify: give files or --manifest", ErrorKind::usage);
        const auto verdicts = classify_files(paths, ed, sd, &ctx.diag);
        std::string text = with_provenance_line(prov);
        for (const auto& v : verdicts) text += verdict_to_json(v, *timings) + "\n";
        write_text(*out, text);
    });
}

void add_eval(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("eval", "Score verdicts against manifest labels");
    auto verdicts = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto out = std::make_shared<std::string>();
    sub->add_option("--verdicts", *verdicts, "Verdict JSON Lines")->required();
    sub->add_option("--manifest", *manifest, "Manifest with labels")->required();
    sub->add_option("--out", *out, "Report JSON to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*verdicts);
        prov.input(*manifest);
        const auto m = load_manifest_checked(*manifest);
        const auto reports = evaluate_verdicts(load_verdicts(*verdicts), m);
        write_text(*out, reports_to_json(reports, prov.str()) + "\n");
    });
}

void add_sweep(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("sweep", "Evaluate verdicts across malware prevalences");
    auto verdicts = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    auto fractions = std::make_shared<std::vector<double>>(default_fractions());
    auto seed = std::make_shared<std::uint64_t>(0);
    auto sample = std::make_shared<std::size_t>(0);
    auto out = std::make_shared<std::string>();
    sub->add_option("--verdicts", *verdicts, "Verdict JSON Lines")->required();
    sub->add_option("--manifest", *manifest, "Manifest with labels")->required();
    sub->add_option("--fractions", *fractions, "Malware fractions")->delimiter(',')->capture_default_str();
    sub->add_option("--seed", *seed, "Sampling seed")->capture_default_str();
    sub->add_option("--sample-size", *sample, "Files per point (0 = largest feasible)")->capture_default_str();
    sub->add_option("--out", *out, "Sweep JSON to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*verdicts);
        prov.input(*manifest);
        const auto pool = pipeline::to_predictions(load_verdicts(*verdicts), load_manifest_checked(*manifest));
        const auto points = prevalence_sweep(pool, *fractions, *seed, *sample);
        json j;
        j["provenance"] = prov.to_json();
        j["points"] = json::array();
        for (const auto& p : points) {
            auto r = json::parse(report_to_json(p.report));
            json pj;
            pj["malware_fraction"] = p.malware_fraction;
            pj["sample_size"] = p.sample_size;
            pj["report"] = r;
            j["points"].push_back(pj);
        }
        write_text(*out, j.dump(2) + "\n");
    });
}

void add_synth(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("synth", "Generate a synthetic corpus");
    auto profile = std::make_shared<std::string>();
    auto opts = std::make_shared<synth::SynthOptions>();
    auto out = std::make_shared<std::string>();
    auto manifest = std::make_shared<std::string>();
    sub->add_option("--profile", *profile, "benign_like|polymorphic_like|metamorphic_like|packed_like")->required();
    sub->add_option("--count", opts->count, "Number of files")->capture_default_str();
    sub->add_option("--seed", opts->seed, "Seed")->capture_default_str();
    sub->add_option("--min-size", opts->min_size, "Smallest file size")->capture_default_str();
    sub->add_option("--max-size", opts->max_size, "Largest file size")->capture_default_str();
    sub->add_option("--out", *out, "Output directory")->required();
    sub->add_option("--manifest", *manifest, "Manifest path (default: <out>/manifest.jsonl)");
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        const auto m = synth::synth_corpus(synth::parse_profile(*profile), *opts, *out);
        std::ostringstream ss;
        ss << with_provenance_line(prov);
        corpus::write_manifest(ss, m);
        write_text(manifest->empty() ? fs::path(*out) / "manifest.jsonl" : fs::path(*manifest), ss.str());
    });
}

void add_bench(CLI::App& app, Context& ctx) {
    auto* sub = app.add_subcommand("bench", "Time classification and NCD at doubling corpus sizes");
    auto ents_path = std::make_shared<std::string>();
    auto params_path = std::make_shared<std::string>();
    auto models = std::make_shared<std::string>();
    auto benign = std::make_shared<std::string>();
    auto sizes = std::make_shared<std::vector<std::size_t>>(std::vector<std::size_t>{400, 800, 1600});
    auto file_size = std::make_shared<std::size_t>(4096);
    auto seed = std::make_shared<std::uint64_t>(1);
    auto algorithm = std::make_shared<std::string>("zlib");
    auto skip_ncd = std::make_shared<bool>(false);
    auto out = std::make_shared<std::string>();
    sub->add_option("--ents", *ents_path, "Calibrated forest JSON")->required();
    sub->add_option("--ents-params", *params_path, "EnTS parameter JSON")->required();
    sub->add_option("--slamm", *models, "Comma-separated malware zoo models")->required();
    sub->add_option("--benign", *benign, "Benign zoo model")->required();
    sub->add_option("--sizes", *sizes, "File counts")->delimiter(',')->capture_default_str();
    sub->add_option("--file-size", *file_size, "Bytes per synthetic file")->capture_default_str();
    sub->add_option("--seed", *seed, "Seed")->capture_default_str();
    sub->add_option("--algorithm", *algorithm, "Compressor for the NCD timing")->capture_default_str();
    sub->add_flag("--skip-ncd", *skip_ncd, "Only time classification");
    sub->add_option("--out", *out, "Timing JSON to write")->required();
    sub->callback([=, &ctx] {
        Provenance prov(ctx.root, *sub);
        prov.input(*ents_path);
        prov.input(*params_path);
        EntsDetector ed{forest::load_forest(*ents_path), ents::params_from_json(read_text(*params_path))};
        const auto sd = load_slamm(split_list(*models), *benign, prov);
        std::size_t largest = 0;
        for (auto s : *sizes) largest = std::max(largest, s);
        std::vector<baselines::NamedBytes> files(largest);
        std::mt19937_64 rng(*seed);
        const synth::Profile profiles[] = {synth::Profile::benign_like, synth::Profile::polymorphic_like,
                                           synth::Profile::metamorphic_like, synth::Profile::packed_like};
        for (std::size_t i = 0; i < largest; ++i)
            files[i] = {std::to_string(i), synth::synth_file(profiles[i % 4], *file_size, rng)};
        json j;
        j["provenance"] = prov.to_json();
        j["classification"] = json::array();
        for (const auto& p : pipeline::time_classification(files, *sizes, ed, sd))
            j["classification"].push_back({{"files", p.files}, {"seconds", p.seconds}});
        if (!*skip_ncd) {
            baselines::CompressorSpec spec;
            spec.algorithm_id = *algorithm;
            j["ncd"] = json::array();
            for (const auto& p : pipeline::time_ncd(files, *sizes, spec))
                j["ncd"].push_back({{"files", p.files}, {"seconds", p.seconds}});
        }
        write_text(*out, j.dump(2) + "\n");
    });
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    Diagnostics diag;
    CLI::App app{"itect: information-theoretic malware similarity toolkit", "itect"};
    app.set_version_flag("--version", std::string(kVersion));
    app.set_config("--config", "", "TOML/INI file with option values (flags win)");
    app.require_subcommand(1);
    unsigned threads = 0;
    app.add_option("--threads", threads, "Worker threads (0 = auto)")->envname("ITECT_THREADS")->capture_default_str();

    Context ctx{app, out, diag};
    add_ingest(app, ctx);
    add_split(app, ctx);
    add_ents(app, ctx);
    add_slamm_train(app, ctx);
    add_slamm_classify(app, ctx);
    add_train(app, ctx);
    add_baseline(app, ctx);
    add_classify(app, ctx);
    add_eval(app, ctx);
    add_sweep(app, ctx);
    add_synth(app, ctx);
    add_bench(app, ctx);
    app.parse_complete_callback([&] { set_worker_threads(threads); });

    auto flush_diagnostics = [&] {
        for (const auto& d : diag.entries()) err << to_json_line(d) << '\n';
    };

    int code = kExitOk;
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            out << (dynamic_cast<const CLI::CallForVersion*>(&e) ? std::string(kVersion) + "\n" : app.help());
            return kExitOk;
        }
        err << to_json_line({Severity::error, "usage", e.what(), {}}) << '\n';
        err << app.help();
        code = kExitUsage;
    } catch (const Error& e) {
        err << to_json_line({Severity::error, e.kind() == ErrorKind::usage ? "usage" : "data", e.what(), {}}) << '\n';
        code = e.kind() == ErrorKind::usage ? kExitUsage : kExitData;
    } catch (const std::exception& e) {
        err << to_json_line({Severity::error, "data", e.what(), {}}) << '\n';
        code = kExitData;
    }
    flush_diagnostics();
    return code;
}

}  // namespace itect::cli
