// spose: learn sparse positive similarity embeddings from odd-one-out
// judgments and run the downstream validation pipeline. One subcommand per
// stage; files under --out-dir are the contract between stages.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "spose/catalog.hpp"
#include "spose/choice.hpp"
#include "spose/collector.hpp"
#include "spose/embedding.hpp"
#include "spose/evaluate.hpp"
#include "spose/rng.hpp"
#include "spose/rsa.hpp"
#include "spose/stability.hpp"
#include "spose/trainer.hpp"
#include "spose/tsv.hpp"

namespace fs = std::filesystem;
using namespace spose;

namespace {

std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 1469598103934665603ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t hash_file(const std::string& path, std::uint64_t h) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("required input file is missing: " + path);
    char buf[1 << 16];
    while (in.read(buf, sizeof buf) || in.gcount() > 0) {
        h = fnv1a(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
    }
    return h;
}

void print_warnings(const Warnings& warnings) {
    for (const std::string& w : warnings) std::cerr << "warning: " << w << '\n';
}

std::string strip_quotes(std::string v) {
    if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
        v = v.substr(1, v.size() - 2);
    }
    return v;
}

// Flat key=value stage configs. The file contributes any option not already
// given on the command line, so flags always win; unknown keys surface as
// normal usage errors.
std::vector<std::string> apply_config_file(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            config_path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
        }
    }
    if (config_path.empty()) return args;

    std::ifstream in(config_path);
    if (!in) throw CLI::FileError::Missing(config_path);
    std::string line;
    while (std::getline(in, line)) {
        line = tsv::strip_eol(line);
        if (line.empty() || line[0] == '#' || line[0] == '[') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string value = strip_quotes(line.substr(eq + 1));
        if (key == "config" || key == "force" || key == "help") continue;
        const std::string flag = "--" + key;
        bool given = false;
        for (const std::string& a : args) {
            if (a == flag || a.rfind(flag + "=", 0) == 0) given = true;
        }
        if (given || value.empty()) continue;
        args.push_back(flag + "=" + value);
    }
    return args;
}

// Every stage takes --config and snapshots its resolved options, defaults
// included, so a snapshot alone reproduces the stage.
void add_stage_config(CLI::App* sub) {
    sub->option_defaults()->always_capture_default(true);
    // value consumed by the pre-parse pass; CLI11 only validates it
    sub->add_option_function<std::string>(
           "--config", [](const std::string&) {}, "flat key=value stage config (flags win)")
        ->check(CLI::ExistingFile);
}

std::vector<ObjectId> parse_id_list(const std::string& csv) {
    std::vector<ObjectId> ids;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        ids.push_back(static_cast<ObjectId>(std::stoul(item)));
    }
    return ids;
}

std::vector<double> parse_double_list(const std::string& csv) {
    std::vector<double> out;
    std::stringstream ss(csv);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stod(item));
    }
    return out;
}

// Run-directory plumbing shared by all stages: the resolved-config snapshot
// is written before any stage output, and a completed stage whose config and
// inputs are unchanged is skipped unless --force.
class Stage {
public:
    Stage(CLI::App* sub, const std::string& name, const std::string& out_dir, bool force)
        : sub_(sub), name_(name), out_dir_(out_dir), force_(force) {
        fs::create_directories(out_dir_);
    }

    std::string path(const std::string& file) const { return (fs::path(out_dir_) / file).string(); }

    // True when the stage still needs to run.
    bool begin(const std::vector<std::string>& input_files) {
        std::uint64_t h = fnv1a(name_);
        h = fnv1a(sub_->config_to_str(true, false), h);
        for (const std::string& f : input_files) h = hash_file(f, h);
        signature_ = h;

        const std::string marker = path(name_ + ".done");
        if (!force_ && fs::exists(marker)) {
            std::ifstream in(marker);
            std::string prev;
            in >> prev;
            if (prev == std::to_string(signature_)) {
                std::cout << "stage " << name_ << " is up to date in " << out_dir_
                          << " (use --force to re-run)\n";
                return false;
            }
        }
        std::ofstream snap(path(name_ + ".config"));
        snap << sub_->config_to_str(true, false);
        if (!snap) throw Error("cannot write config snapshot in " + out_dir_);
        return true;
    }

    void finish() {
        std::ofstream marker(path(name_ + ".done"));
        marker << signature_ << '\n';
    }

private:
    CLI::App* sub_;
    std::string name_;
    std::string out_dir_;
    bool force_;
    std::uint64_t signature_ = 0;
};

struct TrainFlags {
    std::string judgments;
    std::string catalog;
    TrainingConfig config;

    void attach(CLI::App* sub) {
        sub->add_option("--judgments", judgments, "judgment file (a\\tb\\tc\\tchoice)")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--catalog", catalog, "object catalog file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--dims", config.init_dims, "initial dimensionality");
        sub->add_option("--lambda", config.lambda, "L1 sparsity weight");
        sub->add_option("--batch-size", config.batch_size, "mini-batch size");
        sub->add_option("--epochs", config.epochs, "maximum epochs");
        sub->add_option("--learning-rate", config.learning_rate, "Adam learning rate");
        sub->add_option("--prune-threshold", config.prune_threshold,
                        "drop dimensions whose max weight stays below this");
        sub->add_option("--seed", config.seed, "RNG seed");
        sub->add_option("--heldout-fraction", config.heldout_fraction,
                        "fraction held out for early stopping");
        sub->add_option("--patience", config.patience, "early-stop patience in epochs");
    }
};

void write_report(const TrainReport& report, const std::string& curve_path,
                  const std::string& summary_path) {
    std::ofstream out = tsv::open_output(curve_path);
    out << "epoch\ttrain_nll\theldout_nll\tl1\tseconds\n";
    for (std::size_t e = 0; e < report.epochs_run; ++e) {
        out << e << '\t' << tsv::format_double(report.train_nll[e]) << '\t'
            << tsv::format_double(report.heldout_nll[e]) << '\t'
            << tsv::format_double(report.l1_term[e]) << '\t'
            << tsv::format_double(report.epoch_seconds[e]) << '\n';
    }

    std::ofstream sum = tsv::open_output(summary_path);
    sum << "key\tvalue\n";
    sum << "epochs_run\t" << report.epochs_run << '\n';
    sum << "early_stopped\t" << (report.early_stopped ? 1 : 0) << '\n';
    sum << "dims_before_pruning\t" << report.dims_before_pruning << '\n';
    sum << "final_dims\t" << report.final_dims << '\n';
    sum << "init_dims\t" << report.config.init_dims << '\n';
    sum << "batch_size\t" << report.config.batch_size << '\n';
    sum << "lambda\t" << tsv::format_double(report.config.lambda) << '\n';
    sum << "seed\t" << report.config.seed << '\n';
}

int run_app(int argc, char** argv) {
    CLI::App app{"sparse positive similarity embeddings from odd-one-out judgments"};
    app.require_subcommand(1);

    bool force = false;
    app.add_flag("--force", force, "re-run stages even when outputs are up to date");

    // ----- synth -----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "simulate judgments from a generator embedding");
    add_stage_config(synth);
    struct {
        std::string catalog, generator, out_dir = ".", exclude;
        std::uint64_t n = 0, seed = 0;
        std::size_t repeats = 1;
        bool distinct = false, deterministic = false;
    } sy;
    synth->add_option("--catalog", sy.catalog)->required()->check(CLI::ExistingFile);
    synth->add_option("--generator", sy.generator, "embedding file of the generating model")
        ->required()
        ->check(CLI::ExistingFile);
    synth->add_option("--n", sy.n, "number of triplets")->required();
    synth->add_option("--seed", sy.seed);
    synth->add_option("--repeats", sy.repeats, "choices per triplet (writes a repeat file)");
    synth->add_option("--exclude", sy.exclude, "comma-separated object ids to exclude");
    synth->add_flag("--distinct", sy.distinct, "sample triplets without replacement");
    synth->add_flag("--deterministic", sy.deterministic, "argmax choices instead of sampling");
    synth->add_option("--out-dir", sy.out_dir);

    synth->callback([&] {
        Stage stage(synth, "synth", sy.out_dir, force);
        if (!stage.begin({sy.catalog, sy.generator})) return;
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(sy.catalog, &warnings);
        const Embedding generator = read_embedding(sy.generator);
        if (generator.objects() != catalog.size()) {
            throw Error("generator embedding covers " + std::to_string(generator.objects()) +
                        " objects but the catalog has " + std::to_string(catalog.size()));
        }
        const std::vector<ObjectId> exclude = parse_id_list(sy.exclude);
        const std::vector<Triplet> triplets =
            sy.distinct ? sample_triplets(catalog.size(), sy.n, sy.seed, exclude)
                        : sample_triplets_with_replacement(catalog.size(), sy.n, sy.seed, exclude);
        if (sy.repeats <= 1) {
            const JudgmentSet set =
                simulate_judgments(generator, triplets, mix64(sy.seed, 1), sy.deterministic);
            write_judgments(set, stage.path("judgments.tsv"));
        } else {
            std::vector<std::vector<int>> choices(triplets.size());
            for (std::size_t r = 0; r < sy.repeats; ++r) {
                const JudgmentSet set =
                    simulate_judgments(generator, triplets, mix64(sy.seed, r + 1), sy.deterministic);
                for (std::size_t i = 0; i < triplets.size(); ++i) {
                    choices[i].push_back(set.judgments[i].choice);
                }
            }
            write_repeats(triplets, choices, stage.path("repeats.tsv"));
        }
        print_warnings(warnings);
        stage.finish();
    });

    // ----- train ------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "fit an embedding to judgments");
    add_stage_config(train_cmd);
    TrainFlags tr;
    tr.attach(train_cmd);
    std::string train_out = ".";
    train_cmd->add_option("--out-dir", train_out);

    train_cmd->callback([&] {
        Stage stage(train_cmd, "train", train_out, force);
        if (!stage.begin({tr.judgments, tr.catalog})) return;
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(tr.catalog, &warnings);
        const JudgmentSet set = read_judgments(tr.judgments);
        auto [emb, report] = train(set, catalog.size(), tr.config);
        write_embedding(emb, stage.path("embedding.tsv"));
        write_report(report, stage.path("report.tsv"), stage.path("summary.tsv"));
        print_warnings(warnings);
        std::cout << "trained " << emb.dims() << " dimensions over " << emb.objects()
                  << " objects in " << report.epochs_run << " epochs\n";
        stage.finish();
    });

    // ----- xval -------------------------------------------------------------
    auto* xval = app.add_subcommand("xval", "grid search for the sparsity weight");
    add_stage_config(xval);
    TrainFlags xv;
    xv.attach(xval);
    struct {
        std::string grid = "0.001,0.002,0.004,0.008";
        std::string out_dir = ".";
        std::size_t jobs = 1;
    } xf;
    xval->add_option("--lambda-grid", xf.grid, "comma-separated lambda grid");
    xval->add_option("--jobs", xf.jobs, "concurrent training runs");
    xval->add_option("--out-dir", xf.out_dir);

    xval->callback([&] {
        Stage stage(xval, "xval", xf.out_dir, force);
        if (!stage.begin({xv.judgments, xv.catalog})) return;
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(xv.catalog, &warnings);
        const JudgmentSet set = read_judgments(xv.judgments);
        const std::vector<double> grid = parse_double_list(xf.grid);
        const LambdaTable table =
            cross_validate_lambda(set, catalog.size(), xv.config, grid, &warnings, xf.jobs);
        std::ofstream out = tsv::open_output(stage.path("lambda_table.tsv"));
        out << "lambda\theldout_nll\tfinal_dims\tstatus\tbest\n";
        for (const LambdaCell& cell : table.cells) {
            out << tsv::format_double(cell.lambda) << '\t'
                << (cell.failed ? "" : tsv::format_double(cell.heldout_nll)) << '\t'
                << cell.final_dims << '\t' << (cell.failed ? "failed" : "ok") << '\t'
                << (!cell.failed && cell.lambda == table.best_lambda ? 1 : 0) << '\n';
        }
        print_warnings(warnings);
        std::cout << "best lambda: " << table.best_lambda << '\n';
        stage.finish();
    });

    // ----- stability --------------------------------------------------------
    auto* stab = app.add_subcommand("stability", "multi-run reproducibility analysis");
    add_stage_config(stab);
    TrainFlags st;
    st.attach(stab);
    struct {
        std::size_t runs = 20, jobs = 1, top_k = 0;
        double redundancy = 0.4;
        std::string out_dir = ".";
    } sf;
    stab->add_option("--runs", sf.runs, "number of independently seeded runs");
    stab->add_option("--jobs", sf.jobs, "concurrent training runs");
    stab->add_option("--top-k", sf.top_k, "select the k most reproducible dimensions (0 = skip)");
    stab->add_option("--redundancy-threshold", sf.redundancy,
                     "within-run redundancy pruning threshold");
    stab->add_option("--out-dir", sf.out_dir);

    stab->callback([&] {
        Stage stage(stab, "stability", sf.out_dir, force);
        if (!stage.begin({st.judgments, st.catalog})) return;
        if (sf.runs < 3) throw Error("stability needs at least 3 runs");
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(st.catalog, &warnings);
        const JudgmentSet set = read_judgments(st.judgments);

        fs::create_directories(stage.path("runs"));
        std::vector<Embedding> runs(sf.runs);
        std::vector<std::string> errors(sf.runs);
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (std::size_t r = next.fetch_add(1); r < sf.runs; r = next.fetch_add(1)) {
                try {
                    TrainingConfig cfg = st.config;
                    cfg.seed = mix64(st.config.seed, r);
                    runs[r] = train(set, catalog.size(), cfg).first;
                } catch (const std::exception& e) {
                    errors[r] = e.what();
                }
            }
        };
        std::vector<std::thread> pool;
        const std::size_t workers = std::max<std::size_t>(1, std::min(sf.jobs, sf.runs));
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
        for (std::size_t r = 0; r < sf.runs; ++r) {
            if (!errors[r].empty()) throw Error("run " + std::to_string(r) + " failed: " + errors[r]);
        }

        std::ofstream manifest = tsv::open_output(stage.path("runs.manifest"));
        for (std::size_t r = 0; r < sf.runs; ++r) {
            const std::string file = "runs/run_" + std::to_string(r) + ".embedding.tsv";
            write_embedding(runs[r], stage.path(file));
            manifest << file << '\n';
        }

        const Embedding target = prune_redundant(runs[0], sf.redundancy);
        std::vector<Embedding> references(runs.begin() + 1, runs.end());
        ReproducibilityReport report = reproducibility_scores(target, references, &warnings);

        if (sf.top_k > 0) {
            const Embedding selected = select_top_k(target, report, sf.top_k);
            write_embedding(selected, stage.path("selected.embedding.tsv"));
        } else {
            write_embedding(target, stage.path("pruned.embedding.tsv"));
        }

        std::ofstream out = tsv::open_output(stage.path("reproducibility.tsv"));
        out << "dim\tscore\tselected\n";
        for (std::size_t d = 0; d < report.scores.size(); ++d) {
            const bool chosen = std::find(report.selected.begin(), report.selected.end(), d) !=
                                report.selected.end();
            out << d << '\t' << tsv::format_double(report.scores[d]) << '\t' << (chosen ? 1 : 0)
                << '\n';
        }
        print_warnings(warnings);
        stage.finish();
    });

    // ----- eval -------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "held-out accuracy and RSM comparison");
    add_stage_config(eval_cmd);
    struct {
        std::string embedding, judgments, subset, out_dir = ".";
    } ev;
    eval_cmd->add_option("--embedding", ev.embedding)->required()->check(CLI::ExistingFile);
    eval_cmd->add_option("--judgments", ev.judgments, "held-out judgments")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--subset", ev.subset,
                         "comma-separated object ids for the RSM comparison (optional)");
    eval_cmd->add_option("--out-dir", ev.out_dir);

    eval_cmd->callback([&] {
        Stage stage(eval_cmd, "eval", ev.out_dir, force);
        if (!stage.begin({ev.embedding, ev.judgments})) return;
        const Embedding emb = read_embedding(ev.embedding);
        const JudgmentSet set = read_judgments(ev.judgments);
        const AccuracyResult acc = heldout_accuracy(emb, set.judgments);
        {
            std::ofstream out = tsv::open_output(stage.path("accuracy.tsv"));
            out << "accuracy\tn\tlo95\thi95\n";
            out << tsv::format_double(acc.accuracy) << '\t' << acc.n << '\t'
                << tsv::format_double(acc.lo95) << '\t' << tsv::format_double(acc.hi95) << '\n';
        }
        std::cout << "held-out accuracy " << acc.accuracy << " (n=" << acc.n << ", 95% ["
                  << acc.lo95 << ", " << acc.hi95 << "])\n";

        if (!ev.subset.empty()) {
            const std::vector<ObjectId> subset = parse_id_list(ev.subset);
            const RSM predicted = predicted_rsm(emb, subset);
            const RSM measured = measured_rsm(set.judgments, subset);
            write_rsm(predicted, stage.path("predicted.rsm"));
            write_rsm(measured, stage.path("measured.rsm"));
            const double r = rsm_correlation(predicted, measured);
            std::ofstream out = tsv::open_output(stage.path("rsm_correlation.tsv"));
            out << "pearson_r\tpairs\n";
            out << tsv::format_double(r) << '\t' << subset.size() * (subset.size() - 1) / 2 << '\n';
            std::cout << "predicted-vs-measured RSM correlation " << r << '\n';
        }
        stage.finish();
    });

    // ----- categorize -------------------------------------------------------
    auto* cat_cmd = app.add_subcommand("categorize", "nearest-centroid category prediction");
    add_stage_config(cat_cmd);
    struct {
        std::string embedding, catalog, out_dir = ".";
    } ct;
    cat_cmd->add_option("--embedding", ct.embedding)->required()->check(CLI::ExistingFile);
    cat_cmd->add_option("--catalog", ct.catalog)->required()->check(CLI::ExistingFile);
    cat_cmd->add_option("--out-dir", ct.out_dir);

    cat_cmd->callback([&] {
        Stage stage(cat_cmd, "categorize", ct.out_dir, force);
        if (!stage.begin({ct.embedding, ct.catalog})) return;
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(ct.catalog, &warnings);
        const Embedding emb = read_embedding(ct.embedding);
        const CategorizationResult res = categorize(emb, catalog, &warnings);
        {
            std::ofstream out = tsv::open_output(stage.path("categorize.tsv"));
            out << "top1_accuracy\tn\tcategories\tchance\n";
            out << tsv::format_double(res.top1_accuracy) << '\t' << res.n << '\t'
                << res.per_category_accuracy.size() << '\t'
                << tsv::format_double(1.0 / static_cast<double>(res.per_category_accuracy.size()))
                << '\n';
        }
        {
            std::ofstream out = tsv::open_output(stage.path("per_category.tsv"));
            out << "category\taccuracy\n";
            for (const auto& [name, acc] : res.per_category_accuracy) {
                out << name << '\t' << tsv::format_double(acc) << '\n';
            }
        }
        {
            std::ofstream out = tsv::open_output(stage.path("confusion.tsv"));
            out << "true\tpredicted\tcount\n";
            for (const auto& [pair, count] : res.confusion) {
                out << pair.first << '\t' << pair.second << '\t' << count << '\n';
            }
        }
        print_warnings(warnings);
        std::cout << "top-1 accuracy " << res.top1_accuracy << " over " << res.n << " objects\n";
        stage.finish();
    });

    // ----- mindims ----------------------------------------------------------
    auto* mind = app.add_subcommand("mindims", "per-object minimal dimension counts");
    add_stage_config(mind);
    struct {
        std::string embedding, judgments, out_dir = ".";
        double retention = 0.95;
    } md;
    mind->add_option("--embedding", md.embedding)->required()->check(CLI::ExistingFile);
    mind->add_option("--judgments", md.judgments, "held-out judgments")
        ->required()
        ->check(CLI::ExistingFile);
    mind->add_option("--retention", md.retention, "fraction of baseline accuracy to retain");
    mind->add_option("--out-dir", md.out_dir);

    mind->callback([&] {
        Stage stage(mind, "mindims", md.out_dir, force);
        if (!stage.begin({md.embedding, md.judgments})) return;
        const Embedding emb = read_embedding(md.embedding);
        const JudgmentSet set = read_judgments(md.judgments);
        const auto counts = minimal_dimensions(emb, set.judgments, md.retention);
        std::ofstream out = tsv::open_output(stage.path("mindims.tsv"));
        out << "object\tdimensions\n";
        for (std::size_t obj = 0; obj < counts.size(); ++obj) {
            out << obj << '\t';
            if (counts[obj]) {
                out << *counts[obj];
            } else {
                out << "NA";
            }
            out << '\n';
        }
        stage.finish();
    });

    // ----- rate -------------------------------------------------------------
    auto* rate = app.add_subcommand("rate", "ridge dimension rating from stimulus features");
    add_stage_config(rate);
    struct {
        std::string features, targets, predict, out_dir = ".";
        std::string penalties = "0.001,0.01,0.1,1,10,100";
        std::size_t folds = 5;
    } rt;
    rate->add_option("--features", rt.features, "feature file for the training stimuli")
        ->required()
        ->check(CLI::ExistingFile);
    rate->add_option("--targets", rt.targets, "embedding file with the dimension values")
        ->required()
        ->check(CLI::ExistingFile);
    rate->add_option("--predict-features", rt.predict,
                     "feature file of new stimuli to rate (optional)")
        ->check(CLI::ExistingFile);
    rate->add_option("--penalties", rt.penalties, "comma-separated ridge penalty grid");
    rate->add_option("--folds", rt.folds, "cross-validation folds");
    rate->add_option("--out-dir", rt.out_dir);

    rate->callback([&] {
        Stage stage(rate, "rate", rt.out_dir, force);
        std::vector<std::string> inputs{rt.features, rt.targets};
        if (!rt.predict.empty()) inputs.push_back(rt.predict);
        if (!stage.begin(inputs)) return;
        const FeatureMatrix features = read_features(rt.features);
        const Embedding targets = read_embedding(rt.targets);
        const RatingModel model =
            ridge_fit(features, targets, parse_double_list(rt.penalties), rt.folds);
        {
            std::ofstream out = tsv::open_output(stage.path("model.tsv"));
            out << "dim\tpenalty\tintercept";
            for (std::size_t c = 0; c < model.feature_count; ++c) out << "\tw_" << c;
            out << '\n';
            for (std::size_t d = 0; d < model.target_count; ++d) {
                out << d << '\t' << tsv::format_double(model.penalties[d]) << '\t'
                    << tsv::format_double(model.intercepts[d]);
                for (std::size_t c = 0; c < model.feature_count; ++c) {
                    out << '\t' << tsv::format_double(model.weights[d * model.feature_count + c]);
                }
                out << '\n';
            }
        }
        {
            std::ofstream out = tsv::open_output(stage.path("cv.tsv"));
            out << "dim\tpenalty\tmse\tr2\n";
            for (std::size_t d = 0; d < model.cv_table.size(); ++d) {
                for (const RidgeCvCell& cell : model.cv_table[d]) {
                    out << d << '\t' << tsv::format_double(cell.penalty) << '\t'
                        << tsv::format_double(cell.mse) << '\t' << tsv::format_double(cell.r2)
                        << '\n';
                }
            }
        }
        if (!rt.predict.empty()) {
            const FeatureMatrix new_features = read_features(rt.predict);
            const Embedding predicted = ridge_predict(model, new_features);
            write_embedding(predicted, stage.path("predicted.tsv"));
        }
        stage.finish();
    });

    // ----- rsa --------------------------------------------------------------
    auto* rsa_cmd = app.add_subcommand("rsa", "searchlight RSA against neural RSM bundles");
    add_stage_config(rsa_cmd);
    struct {
        std::string model_rsm, neural_dir, out_dir = ".";
        std::size_t n_perm = 999;
        std::uint64_t seed = 0;
        double q = 0.05;
    } rs;
    rsa_cmd->add_option("--model-rsm", rs.model_rsm)->required()->check(CLI::ExistingFile);
    rsa_cmd->add_option("--neural-dir", rs.neural_dir,
                        "directory of <site>.rsm files with optional rois.tsv and ceilings.tsv")
        ->required()
        ->check(CLI::ExistingDirectory);
    rsa_cmd->add_option("--n-perm", rs.n_perm, "permutations per site");
    rsa_cmd->add_option("--seed", rs.seed);
    rsa_cmd->add_option("--q", rs.q, "FDR level");
    rsa_cmd->add_option("--out-dir", rs.out_dir);

    rsa_cmd->callback([&] {
        Stage stage(rsa_cmd, "rsa", rs.out_dir, force);

        std::map<std::string, RSM> sites;
        std::vector<std::string> inputs{rs.model_rsm};
        std::vector<std::string> site_files;
        for (const auto& entry : fs::directory_iterator(rs.neural_dir)) {
            if (entry.path().extension() == ".rsm") site_files.push_back(entry.path().string());
        }
        std::sort(site_files.begin(), site_files.end());
        for (const std::string& f : site_files) inputs.push_back(f);

        const std::string rois_path = (fs::path(rs.neural_dir) / "rois.tsv").string();
        const std::string ceil_path = (fs::path(rs.neural_dir) / "ceilings.tsv").string();
        const bool have_rois = fs::exists(rois_path);
        const bool have_ceilings = fs::exists(ceil_path);
        if (have_rois) inputs.push_back(rois_path);
        if (have_ceilings) inputs.push_back(ceil_path);
        if (!stage.begin(inputs)) return;
        if (site_files.empty()) throw Error("no .rsm files found in " + rs.neural_dir);

        const RSM model_rsm = read_rsm(rs.model_rsm);
        for (const std::string& f : site_files) {
            sites.emplace(fs::path(f).stem().string(), read_rsm(f));
        }

        std::map<std::string, std::string> rois;
        if (have_rois) {
            std::ifstream in = tsv::open_input(rois_path);
            std::string line;
            long lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                line = tsv::strip_eol(line);
                if (line.empty() || line == "site_id\tlabel") continue;
                const auto f = tsv::split(line);
                if (f.size() != 2) throw ParseError("expected site_id\\tlabel", rois_path, lineno);
                rois[f[0]] = f[1];
            }
        }
        std::map<std::string, double> ceilings;
        if (have_ceilings) {
            std::ifstream in = tsv::open_input(ceil_path);
            std::string line;
            long lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                line = tsv::strip_eol(line);
                if (line.empty() || line == "site_id\tceiling") continue;
                const auto f = tsv::split(line);
                if (f.size() != 2) throw ParseError("expected site_id\\tceiling", ceil_path, lineno);
                ceilings[f[0]] = tsv::parse_double(f[1], ceil_path, lineno);
            }
        }

        Warnings warnings;
        const SearchlightResult res =
            searchlight(model_rsm, sites, have_ceilings ? &ceilings : nullptr, rs.n_perm, rs.seed,
                        rs.q, have_rois ? &rois : nullptr, &warnings);
        {
            std::ofstream out = tsv::open_output(stage.path("searchlight.tsv"));
            out << "site\trho\tpvalue\tsignificant\tnormalized\troi\n";
            for (const SiteResult& sr : res.sites) {
                out << sr.site << '\t' << tsv::format_double(sr.rho) << '\t'
                    << tsv::format_double(sr.pvalue) << '\t' << (sr.significant ? 1 : 0) << '\t'
                    << (sr.normalized ? tsv::format_double(*sr.normalized) : std::string("NA"))
                    << '\t' << (sr.roi.empty() ? "unlabeled" : sr.roi) << '\n';
            }
        }
        {
            std::ofstream out = tsv::open_output(stage.path("roi_means.tsv"));
            out << "roi\tmean_rho\tmean_normalized\n";
            for (const auto& [roi, rho] : res.roi_mean_rho) {
                out << roi << '\t' << tsv::format_double(rho) << '\t';
                const auto it = res.roi_mean_normalized.find(roi);
                out << (it != res.roi_mean_normalized.end() ? tsv::format_double(it->second)
                                                            : std::string("NA"))
                    << '\n';
            }
        }
        print_warnings(warnings);
        stage.finish();
    });

    // ----- collect ----------------------------------------------------------
    auto* col = app.add_subcommand("collect", "submit triplets to a chat-completion endpoint");
    add_stage_config(col);
    struct {
        std::string catalog, triplets, out_dir = ".";
        std::string template_kind = "text", template_file;
        CollectorConfig config;
        long reserve = -1;
    } co;
    col->add_option("--catalog", co.catalog)->required()->check(CLI::ExistingFile);
    col->add_option("--triplets", co.triplets, "triplet list file (a\\tb\\tc)")
        ->required()
        ->check(CLI::ExistingFile);
    col->add_option("--template", co.template_kind, "text or image")
        ->check(CLI::IsMember({"text", "image"}));
    col->add_option("--template-file", co.template_file, "custom template with the placeholders")
        ->check(CLI::ExistingFile);
    col->add_option("--endpoint", co.config.endpoint, "e.g. https://api.example.com");
    col->add_option("--path", co.config.path, "endpoint path");
    col->add_option("--model", co.config.model);
    col->add_option("--temperature", co.config.temperature);
    col->add_option("--concurrency", co.config.max_concurrent);
    col->add_option("--rate-cap", co.config.per_minute_cap, "max requests per rate window");
    col->add_option("--rate-window-ms", co.config.rate_window_ms);
    col->add_option("--retry-limit", co.config.retry_limit);
    col->add_option("--repeats", co.config.repeats, "trials per triplet");
    col->add_option("--seed", co.config.seed);
    col->add_option("--max-requests", co.config.max_requests, "request budget (0 = unlimited)");
    col->add_option("--api-key-env", co.config.api_key_env,
                    "environment variable holding the API key");
    col->add_flag("--replace-on-refusal", co.config.replace_on_refusal);
    col->add_option("--reserve", co.reserve, "reserve object id for refusal replacement");
    col->add_flag("--dry-run", co.config.dry_run);
    col->add_option("--out-dir", co.out_dir);

    col->callback([&] {
        // No up-to-date marker here: the audit checkpoint already tracks
        // progress per (triplet, repeat), so re-running just resumes.
        Stage stage(col, "collect", co.out_dir, force);
        Warnings warnings;
        const ObjectCatalog catalog = load_catalog(co.catalog, &warnings);
        std::vector<Triplet> triplets;
        {
            std::ifstream in = tsv::open_input(co.triplets);
            std::string line;
            long lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                line = tsv::strip_eol(line);
                if (line.empty() || line == "a\tb\tc") continue;
                const auto f = tsv::split(line);
                if (f.size() < 3) throw ParseError("expected a\\tb\\tc", co.triplets, lineno);
                triplets.push_back(make_triplet(
                    static_cast<ObjectId>(tsv::parse_long(f[0], co.triplets, lineno)),
                    static_cast<ObjectId>(tsv::parse_long(f[1], co.triplets, lineno)),
                    static_cast<ObjectId>(tsv::parse_long(f[2], co.triplets, lineno))));
            }
        }
        PromptTemplate tmpl =
            co.template_kind == "image" ? default_image_template() : default_text_template();
        if (!co.template_file.empty()) {
            std::ifstream in = tsv::open_input(co.template_file);
            std::stringstream ss;
            ss << in.rdbuf();
            tmpl.text = ss.str();
        }
        if (co.reserve >= 0) co.config.reserve_object = static_cast<ObjectId>(co.reserve);

        {
            std::ofstream snap(stage.path("collect.config"));
            snap << col->config_to_str(true, false);
        }

        const CollectResult res =
            collect(triplets, tmpl, catalog, co.config, stage.path("audit.jsonl"), &warnings);
        if (co.config.repeats <= 1) {
            write_judgments(res.judgments, stage.path("collected.tsv"));
        } else {
            std::map<Triplet, std::vector<int>> grouped;
            for (const Judgment& j : res.judgments.judgments) {
                grouped[j.triplet].push_back(j.choice);
            }
            std::vector<Triplet> ts;
            std::vector<std::vector<int>> cs;
            for (auto& [t, c] : grouped) {
                ts.push_back(t);
                cs.push_back(std::move(c));
            }
            write_repeats(ts, cs, stage.path("collected_repeats.tsv"));
        }
        print_warnings(warnings);
        std::cout << "completed " << res.completed << ", skipped " << res.skipped << ", failed "
                  << res.failed << ", requests " << res.requests_sent
                  << (res.interrupted ? " (interrupted by budget)" : "") << '\n';
        if (res.interrupted) return;
    });

    try {
        std::vector<std::string> args = apply_config_file(argc, argv);
        std::vector<char*> argv2;
        argv2.push_back(argv[0]);
        for (std::string& a : args) argv2.push_back(a.data());
        app.parse(static_cast<int>(argv2.size()), argv2.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;  // usage error
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run_app(argc, argv);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;  // analysis error
    }
}
