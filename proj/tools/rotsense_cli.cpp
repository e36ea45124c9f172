// rotsense: batch front end for the rotation-sensitivity test and the
// varimax concept decomposition.
//
// Exit codes: 0 success, 2 input error (bad flags, files, preconditions),
// 3 numeric failure.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <cli11/CLI11.hpp>
#include <tomlplusplus/toml.hpp>

#include "rotsense/concepts.hpp"
#include "rotsense/eval.hpp"
#include "rotsense/hypotest.hpp"
#include "rotsense/io.hpp"
#include "rotsense/persist.hpp"
#include "rotsense/spectra.hpp"
#include "rotsense/varimax.hpp"

namespace fs = std::filesystem;
using rotsense::Index;
using rotsense::InputError;
using rotsense::Matrix;
using rotsense::NumericError;
using rotsense::json;

namespace {

// ---------------------------------------------------------------------------
// Option table. Every subcommand option is declared once with its type and
// default; values are resolved as default <- TOML <- flag and collected into a
// JSON object that doubles as the hashed run configuration.
// ---------------------------------------------------------------------------

enum class Type { integer, real, text, path, boolean };

struct Spec {
    std::string key;   // TOML key; the flag is --key with '_' -> '-'
    Type type;
    json def;          // null: optional, unset by default
    std::string help;
};

std::string flag_name(const std::string& key) {
    std::string f = key;
    for (auto& c : f)
        if (c == '_') c = '-';
    return "--" + f;
}

json convert_text(const Spec& s, const std::string& raw) {
    try {
        std::size_t used = 0;
        switch (s.type) {
            case Type::integer: {
                const long long v = std::stoll(raw, &used);
                if (used != raw.size()) break;
                return v;
            }
            case Type::real: {
                const double v = std::stod(raw, &used);
                if (used != raw.size()) break;
                return v;
            }
            case Type::text:
            case Type::path: return raw;
            case Type::boolean:
                if (raw == "true" || raw == "1") return true;
                if (raw == "false" || raw == "0") return false;
                break;
        }
    } catch (const std::exception&) {
    }
    throw InputError(flag_name(s.key) + ": cannot parse '" + raw + "'");
}

json convert_toml(const Spec& s, const toml::node& node, const std::string& where) {
    switch (s.type) {
        case Type::integer:
            if (auto v = node.value<long long>(); v && node.is_integer()) return *v;
            break;
        case Type::real:
            if (node.is_number()) return *node.value<double>();
            break;
        case Type::text:
        case Type::path:
            if (auto v = node.value<std::string>()) return *v;
            break;
        case Type::boolean:
            if (auto v = node.value<bool>()) return *v;
            break;
    }
    throw InputError("config " + where + ": wrong type for '" + s.key + "'");
}

const std::vector<Spec>& varimax_specs() {
    static const std::vector<Spec> v = {
        {"tol", Type::real, 1e-8, "varimax relative-gain tolerance"},
        {"max_iter", Type::integer, 1000, "varimax iteration cap"},
        {"restarts", Type::integer, 8, "varimax starts (identity plus random)"},
    };
    return v;
}

std::vector<Spec> with_varimax(std::vector<Spec> specs) {
    const auto& v = varimax_specs();
    specs.insert(specs.end(), v.begin(), v.end());
    return specs;
}

// ---------------------------------------------------------------------------
// Run context
// ---------------------------------------------------------------------------

struct Written {
    fs::path path;
    std::string kind;  // json, md, model, report, matrix
};

struct Context {
    std::string command;
    json config;  // resolved subcommand options plus seed
    std::uint64_t seed = 0;
    unsigned threads = 1;
    fs::path out_dir = ".";
    std::string format = "both";
    bool verify = false;
    std::string config_hash;
    std::vector<Written> written;

    bool has(const std::string& k) const { return config.contains(k) && !config.at(k).is_null(); }
    long long integer(const std::string& k) const { return config.at(k).get<long long>(); }
    double real(const std::string& k) const { return config.at(k).get<double>(); }
    std::string text(const std::string& k) const { return config.at(k).get<std::string>(); }
    bool boolean(const std::string& k) const { return config.at(k).get<bool>(); }

    std::string required_text(const std::string& k) const {
        if (!has(k)) throw InputError(command + ": missing required option " + flag_name(k));
        return text(k);
    }

    json stamp() const { return {{"config_hash", config_hash}, {"seed", seed}, {"command", command}}; }

    fs::path out(const std::string& name) const { return out_dir / name; }

    void write_json(const std::string& stem, json result) {
        if (format == "md") return;
        json doc;
        doc["command"] = command;
        doc["version"] = rotsense::kVersion;
        doc["seed"] = seed;
        doc["config_hash"] = config_hash;
        doc["config"] = config;
        doc["result"] = std::move(result);
        const fs::path p = out(stem + ".json");
        rotsense::write_file_bytes(p, doc.dump(2) + "\n");
        written.push_back({p, "json"});
    }

    void write_md(const std::string& stem, const std::string& body) {
        if (format == "json") return;
        std::ostringstream os;
        os << "# rotsense " << command << "\n\n";
        os << "seed `" << seed << "`, config hash `" << config_hash << "`\n\n";
        os << body;
        const fs::path p = out(stem + ".md");
        rotsense::write_file_bytes(p, os.str());
        written.push_back({p, "md"});
    }

    void note(const fs::path& p, const std::string& kind) { written.push_back({p, kind}); }
};

std::string hash_config(const json& config) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", rotsense::crc32_of(config.dump()));
    return buf;
}

rotsense::VarimaxOptions varimax_options(const Context& ctx) {
    rotsense::VarimaxOptions v;
    v.tol = ctx.real("tol");
    v.max_iter = static_cast<int>(ctx.integer("max_iter"));
    v.restarts = static_cast<int>(ctx.integer("restarts"));
    v.threads = ctx.threads;
    rotsense::require(v.tol > 0.0, "--tol must be positive");
    rotsense::require(v.max_iter >= 1, "--max-iter must be >= 1");
    rotsense::require(v.restarts >= 1, "--restarts must be >= 1");
    return v;
}

rotsense::EmbeddingMatrix load_embeddings(const Context& ctx, const std::string& key) {
    const fs::path p = ctx.required_text(key);
    auto a = ctx.has("input_format") && key == "input"
                 ? rotsense::load_matrix(p, rotsense::parse_matrix_format(ctx.text("input_format")))
                 : rotsense::load_matrix(p);
    return a;
}

Matrix load_plain_matrix(const fs::path& p) {
    const std::string bytes = rotsense::read_file_bytes(p);
    switch (rotsense::format_from_extension(p)) {
        case rotsense::MatrixFormat::npy: return rotsense::parse_npy(bytes);
        case rotsense::MatrixFormat::csv: return rotsense::parse_csv(bytes);
        case rotsense::MatrixFormat::rawbin: return rotsense::decode_rawbin(bytes).data;
    }
    return {};
}

std::vector<long long> parse_int_list(const std::string& s, const std::string& what) {
    std::vector<long long> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto t = rotsense::detail::trim(item);
        if (t.empty()) continue;
        long long v = 0;
        auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
        if (ec != std::errc() || ptr != t.data() + t.size()) throw InputError(what + ": '" + std::string(t) + "' is not an integer");
        out.push_back(v);
    }
    return out;
}

std::vector<Index> parse_ranks(const std::string& s) {
    std::vector<Index> ks;
    for (long long v : parse_int_list(s, "--ks")) ks.push_back(static_cast<Index>(v));
    rotsense::require(!ks.empty(), "--ks: empty rank list");
    return ks;
}

void write_int_column(const fs::path& p, const std::vector<int>& v) {
    std::string s;
    for (int x : v) s += std::to_string(x) + "\n";
    rotsense::write_file_bytes(p, s);
}

json corpus_hits(const rotsense::Vector& scores, Index r, const std::function<json(Index)>& label) {
    json arr = json::array();
    for (Index i : rotsense::top_r_indices(scores, r)) {
        json item = label(i);
        item["score"] = scores(i);
        arr.push_back(item);
    }
    return arr;
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

rotsense::TestOptions test_options(const Context& ctx) {
    rotsense::TestOptions opt;
    opt.n_resample = static_cast<int>(ctx.integer("resamples"));
    opt.p_convention = rotsense::parse_p_convention(ctx.text("p_convention"));
    opt.varimax = varimax_options(ctx);
    opt.threads = ctx.threads;
    const std::string m = ctx.text("resample_method");
    if (m == "uniform_direction") opt.resample = rotsense::ResampleMethod::uniform_direction;
    else if (m == "explicit_rotation") opt.resample = rotsense::ResampleMethod::explicit_rotation;
    else throw InputError("--resample-method must be uniform_direction or explicit_rotation");
    return opt;
}

// Normalise and factor at the largest rank needed, including the component
// that --drop-leading discards.
rotsense::TruncatedSVD factor_input(const Context& ctx, Index k_max, bool drop) {
    const auto a = load_embeddings(ctx, "input");
    const auto [normalized, scaling] =
        rotsense::normalize(a.data, rotsense::parse_norm_mode(ctx.text("norm_mode")), ctx.real("eps"));
    const Index need = k_max + (drop ? 1 : 0);
    rotsense::require(need <= std::min(a.rows(), a.cols()),
                      "rank " + std::to_string(k_max) + (drop ? " plus the dropped leading component" : "") +
                          " exceeds min(n,d)=" + std::to_string(std::min(a.rows(), a.cols())));
    return rotsense::truncated_svd(normalized, need);
}

int cmd_test(Context& ctx) {
    const Index k = ctx.integer("k");
    rotsense::require(k >= 2, "--k must be >= 2");
    const bool drop = ctx.boolean("drop_leading");
    auto svd = factor_input(ctx, k, drop);
    if (drop) svd = rotsense::drop_leading_component(svd);
    if (svd.k() < k) throw NumericError("test: numerical rank " + std::to_string(svd.k()) + " is below k=" + std::to_string(k));

    auto rep = rotsense::run_test(svd.U.leftCols(k), test_options(ctx), ctx.seed);
    rep.dropped_leading = drop;

    const fs::path container = ctx.out("test_report.rsb");
    rotsense::save_report(container, rep, ctx.stamp());
    ctx.note(container, "report");
    ctx.write_json("test_report", rotsense::report_to_json(rep));
    ctx.write_md("test_report", rotsense::report_markdown(rep));
    return 0;
}

int cmd_ranksweep(Context& ctx) {
    const auto ks = parse_ranks(ctx.required_text("ks"));
    const bool drop = ctx.boolean("drop_leading");
    const Index k_max = *std::max_element(ks.begin(), ks.end());
    const auto svd = factor_input(ctx, k_max, drop);
    const auto sweep = rotsense::rank_sweep(svd, ks, drop, test_options(ctx), ctx.seed);

    json rows = json::array();
    std::ostringstream md;
    md << "| k | TS1 | p_kur | TS2 | p_var | TS3 |\n|---|---|---|---|---|---|\n";
    for (const auto& [k, rep] : sweep) {
        json row = rotsense::report_header_json(rep);
        row["k"] = k;
        rows.push_back(row);
        md << "| " << k << " | " << rep.ts1_obs << " | " << rep.p_kur << " | " << rep.ts2_obs << " | " << rep.p_var
           << " | " << rep.ts3_obs << " |\n";
    }
    ctx.write_json("ranksweep", {{"dropped_leading", drop}, {"ranks", rows}});
    ctx.write_md("ranksweep", "## p-value versus rank\n\n" + md.str());
    return 0;
}

int cmd_decompose(Context& ctx) {
    const auto a = load_embeddings(ctx, "input");
    rotsense::DecomposeOptions opt;
    opt.k = ctx.integer("k");
    opt.norm_mode = rotsense::parse_norm_mode(ctx.text("norm_mode"));
    opt.eps = ctx.real("eps");
    opt.varimax = varimax_options(ctx);
    opt.canonicalize = ctx.boolean("canonicalize");
    const auto model = rotsense::decompose(a, opt, ctx.seed);

    const fs::path container = ctx.out("model.rsb");
    rotsense::save_model(container, model, ctx.stamp());
    ctx.note(container, "model");

    const auto [normalized, scaling] = rotsense::normalize(a.data, opt.norm_mode, opt.eps);
    const double rel_err = (normalized - model.reconstruct_normalized()).norm() / normalized.norm();
    std::vector<double> energy(static_cast<std::size_t>(model.k));
    for (Index j = 0; j < model.k; ++j) energy[static_cast<std::size_t>(j)] = model.Z.col(j).squaredNorm();
    std::vector<double> sv(model.singular_values.data(), model.singular_values.data() + model.singular_values.size());

    json result = {{"n", a.rows()},
                   {"d", a.cols()},
                   {"k", model.k},
                   {"norm_mode", rotsense::to_string(model.scaling.mode)},
                   {"singular_values", sv},
                   {"concept_energy", energy},
                   {"varimax_objective", model.varimax_objective},
                   {"varimax_converged", model.varimax_converged},
                   {"dictionary_orthonormality_residual", rotsense::orthonormality_residual(model.Y)},
                   {"relative_reconstruction_error", rel_err},
                   {"model_file", container.filename().string()}};
    ctx.write_json("decompose", result);

    std::ostringstream md;
    md << "- samples: " << a.rows() << ", width: " << a.cols() << ", concepts: " << model.k << "\n";
    md << "- normalisation: " << rotsense::to_string(model.scaling.mode) << "\n";
    md << "- varimax objective: " << model.varimax_objective << (model.varimax_converged ? "" : " (not converged)") << "\n";
    md << "- relative reconstruction error (normalised space): " << rel_err << "\n\n";
    md << "| concept | energy | singular value |\n|---|---|---|\n";
    for (Index j = 0; j < model.k; ++j)
        md << "| " << j << " | " << energy[static_cast<std::size_t>(j)] << " | " << sv[static_cast<std::size_t>(j)] << " |\n";
    ctx.write_md("decompose", md.str());
    return 0;
}

int cmd_interpret(Context& ctx) {
    const auto model = rotsense::load_model(ctx.required_text("model"));
    const auto corpus = rotsense::load_text_corpus(ctx.required_text("texts"), ctx.required_text("text_embeddings"));
    const Index r = ctx.integer("r");
    const auto concepts = rotsense::interpret(model, corpus, r);

    json arr = json::array();
    std::ostringstream md;
    md << "## Concept gallery manifest\n\n";
    for (const auto& c : concepts) {
        json images = json::array();
        json texts = json::array();
        md << "### Concept " << c.concept_index << "\n\n";
        md << "Images:";
        for (const auto& im : c.top_images) {
            images.push_back({{"id", im.id}, {"score", im.score}});
            md << " `" << im.id << "`";
        }
        md << "\n\nDescriptions:\n";
        for (const auto& t : c.top_texts) {
            texts.push_back({{"text", t.text}, {"score", t.score}});
            md << "- " << t.text << " (" << t.score << ")\n";
        }
        md << "\n";
        arr.push_back({{"index", c.concept_index}, {"top_images", images}, {"top_texts", texts}});
    }
    ctx.write_json("interpret", {{"r", r}, {"concepts", arr}});
    ctx.write_md("interpret", md.str());
    return 0;
}

std::vector<std::pair<Index, double>> parse_terms(const std::string& s) {
    std::vector<std::pair<Index, double>> terms;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) throw InputError("--terms: expected index:weight, got '" + item + "'");
        try {
            terms.emplace_back(std::stoll(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
        } catch (const std::exception&) {
            throw InputError("--terms: cannot parse '" + item + "'");
        }
    }
    return terms;
}

int cmd_arith(Context& ctx) {
    const auto model = rotsense::load_model(ctx.required_text("model"));
    const auto terms = parse_terms(ctx.required_text("terms"));
    const rotsense::Vector c = rotsense::concept_arithmetic(model, terms);
    const Index top = ctx.integer("top");
    rotsense::require(top >= 1, "--top must be >= 1");

    json t = json::array();
    for (const auto& [j, w] : terms) t.push_back({{"concept", j}, {"weight", w}});
    json result = {{"terms", t},
                   {"direction", std::vector<double>(c.data(), c.data() + c.size())},
                   {"direction_norm", c.norm()}};
    std::ostringstream md;
    md << "Direction norm: " << c.norm() << "\n\n";
    if (ctx.has("input")) {
        const auto a = load_embeddings(ctx, "input");
        rotsense::require(a.cols() == c.size(), "arith: input width does not match the model");
        const rotsense::Vector scores = a.data * c;
        result["top_images"] = corpus_hits(scores, std::min<Index>(top, a.rows()), [&](Index i) {
            return json{{"id", a.ids[static_cast<std::size_t>(i)]}};
        });
        md << "Top images:";
        for (const auto& h : result["top_images"]) md << " `" << h["id"].get<std::string>() << "`";
        md << "\n\n";
    }
    if (ctx.has("texts") || ctx.has("text_embeddings")) {
        const auto corpus = rotsense::load_text_corpus(ctx.required_text("texts"), ctx.required_text("text_embeddings"));
        corpus.validate(c.size());
        const rotsense::Vector scores = corpus.embeddings * c;
        result["top_texts"] = corpus_hits(scores, std::min<Index>(top, corpus.size()), [&](Index i) {
            return json{{"text", corpus.descriptions[static_cast<std::size_t>(i)]}};
        });
        md << "Top descriptions:\n";
        for (const auto& h : result["top_texts"]) md << "- " << h["text"].get<std::string>() << "\n";
    }
    ctx.write_json("arith", result);
    ctx.write_md("arith", md.str());
    return 0;
}

rotsense::PromptSet load_prompts(const Context& ctx, Index width) {
    rotsense::PromptSet p;
    p.embeddings = load_plain_matrix(ctx.required_text("prompts"));
    if (ctx.has("prompt_names")) {
        p.class_names = rotsense::load_jsonl_texts(ctx.text("prompt_names"));
    } else {
        for (Index c = 0; c < p.embeddings.rows(); ++c) p.class_names.push_back("class " + std::to_string(c));
    }
    p.validate(width);
    return p;
}

std::optional<std::vector<int>> optional_ints(const Context& ctx, const std::string& key, Index n) {
    if (!ctx.has(key)) return std::nullopt;
    auto v = rotsense::load_int_column(ctx.text(key));
    rotsense::require(static_cast<Index>(v.size()) == n, flag_name(key) + ": expected " + std::to_string(n) +
                                                             " entries, got " + std::to_string(v.size()));
    return v;
}

int cmd_spurious(Context& ctx) {
    const auto model = rotsense::load_model(ctx.required_text("model"));
    const auto target = rotsense::load_text_corpus(ctx.required_text("target_texts"), ctx.required_text("target_embeddings"));
    const auto spurious =
        rotsense::load_text_corpus(ctx.required_text("spurious_texts"), ctx.required_text("spurious_embeddings"));
    const auto rep = rotsense::detect_spurious(model, target, spurious, ctx.real("margin"));

    auto vec = [](const rotsense::Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    json result = {{"margin", rep.margin},
                   {"flagged", rep.flagged},
                   {"target_sim", vec(rep.target_sim)},
                   {"spurious_sim", vec(rep.spurious_sim)}};
    std::ostringstream md;
    md << "Margin " << rep.margin << ", flagged concepts:";
    for (Index j : rep.flagged) md << " " << j;
    md << (rep.flagged.empty() ? " none" : "") << "\n\n| concept | target sim | spurious sim |\n|---|---|---|\n";
    for (Index j = 0; j < model.k; ++j) md << "| " << j << " | " << rep.target_sim(j) << " | " << rep.spurious_sim(j) << " |\n";

    // Optional downstream check: zero-shot before and after removing the flagged concepts.
    if (ctx.has("input")) {
        const auto a = load_embeddings(ctx, "input");
        rotsense::require(a.rows() == model.Z.rows() && a.cols() == model.Y.rows(), "spurious: input shape does not match the model");
        const auto prompts = load_prompts(ctx, a.cols());
        const auto labels = optional_ints(ctx, "labels", a.rows());
        rotsense::require(labels.has_value(), "spurious: --labels is required with --input");
        const auto groups = optional_ints(ctx, "groups", a.rows());
        const auto cleaned = rotsense::remove_and_reconstruct(model, rep.flagged, ctx.boolean("invert"));
        const auto before = rotsense::group_metrics(rotsense::zero_shot_predict(a.data, prompts), *labels, groups);
        const auto after = rotsense::group_metrics(rotsense::zero_shot_predict(cleaned.data, prompts), *labels, groups);
        result["zero_shot_before"] = rotsense::to_json(before);
        result["zero_shot_after"] = rotsense::to_json(after);
        result["worst_group_improvement"] = after.worst_group_acc - before.worst_group_acc;
        md << "\n## Zero-shot before and after removal\n\n"
           << rotsense::metrics_markdown_table({{"original", before}, {"concepts removed", after}});
        md << "\nWorst-group improvement: " << after.worst_group_acc - before.worst_group_acc << "\n";
    }
    ctx.write_json("spurious", result);
    ctx.write_md("spurious", md.str());
    return 0;
}

int cmd_reconstruct(Context& ctx) {
    const auto model = rotsense::load_model(ctx.required_text("model"));
    std::vector<Index> remove;
    if (ctx.has("remove"))
        for (long long j : parse_int_list(ctx.text("remove"), "--remove")) remove.push_back(static_cast<Index>(j));
    if (ctx.has("remove_from")) {
        try {
            const json doc = json::parse(rotsense::read_file_bytes(ctx.text("remove_from")));
            for (const auto& j : doc.at("result").at("flagged")) remove.push_back(j.get<Index>());
        } catch (const json::exception& e) {
            throw InputError("--remove-from: not a spurious report: " + std::string(e.what()));
        }
    }
    std::sort(remove.begin(), remove.end());
    remove.erase(std::unique(remove.begin(), remove.end()), remove.end());

    const auto rec = rotsense::remove_and_reconstruct(model, remove, ctx.boolean("invert"));
    const auto fmt = rotsense::parse_matrix_format(ctx.text("output_format"));
    const std::string ext = fmt == rotsense::MatrixFormat::npy ? ".npy" : fmt == rotsense::MatrixFormat::csv ? ".csv" : ".rsb";
    const fs::path out = ctx.out("reconstruction" + ext);
    rotsense::save_matrix(out, rec, fmt);
    ctx.note(out, "matrix");

    json result = {{"removed", remove},
                   {"inverted_scaling", ctx.boolean("invert")},
                   {"shape", {rec.rows(), rec.cols()}},
                   {"output_file", out.filename().string()}};
    std::ostringstream md;
    md << "Removed concepts:";
    for (Index j : remove) md << " " << j;
    md << (remove.empty() ? " none" : "") << "\n\nWrote `" << out.filename().string() << "` (" << rec.rows() << " x "
       << rec.cols() << ")\n";
    if (ctx.has("input")) {
        const auto a = load_embeddings(ctx, "input");
        const double f = rotsense::reconstruction_fidelity(a.data, rec.data);
        result["fidelity"] = f;
        md << "\nFidelity (mean row cosine): " << f << "\n";
    }
    ctx.write_json("reconstruct", result);
    ctx.write_md("reconstruct", md.str());
    return 0;
}

int cmd_fidelity(Context& ctx) {
    const auto a = load_embeddings(ctx, "input");
    rotsense::DecomposeOptions opt;
    opt.norm_mode = rotsense::parse_norm_mode(ctx.text("norm_mode"));
    opt.eps = ctx.real("eps");
    opt.varimax = varimax_options(ctx);
    const auto curve = rotsense::fidelity_curve(a, parse_ranks(ctx.required_text("ks")), opt, ctx.seed);
    json rows = json::array();
    std::ostringstream md;
    md << "| k | fidelity |\n|---|---|\n";
    for (const auto& [k, f] : curve) {
        rows.push_back({{"k", k}, {"fidelity", f}});
        md << "| " << k << " | " << f << " |\n";
    }
    ctx.write_json("fidelity", {{"curve", rows}});
    ctx.write_md("fidelity", "## Reconstruction fidelity versus rank\n\n" + md.str());
    return 0;
}

int cmd_zershot(Context& ctx) {
    const auto a = load_embeddings(ctx, "input");
    const auto prompts = load_prompts(ctx, a.cols());
    const auto preds = rotsense::zero_shot_predict(a.data, prompts);
    json result = {{"classes", prompts.class_names}, {"predictions", preds}};
    std::ostringstream md;
    md << "Predicted " << preds.size() << " samples over " << prompts.class_names.size() << " classes.\n";
    if (const auto labels = optional_ints(ctx, "labels", a.rows())) {
        const auto groups = optional_ints(ctx, "groups", a.rows());
        const auto m = rotsense::group_metrics(preds, *labels, groups);
        result["metrics"] = rotsense::to_json(m);
        md << "\n" << rotsense::metrics_markdown_table({{"zero-shot", m}});
    }
    ctx.write_json("zershot", result);
    ctx.write_md("zershot", md.str());
    return 0;
}

int cmd_synth(Context& ctx) {
    const std::string kind = ctx.text("kind");
    const Index n = ctx.integer("n");
    const Index d = ctx.integer("d");
    rotsense::Rng rng = rotsense::substream(ctx.seed, 0);
    json files = json::object();
    auto put_matrix = [&](const std::string& name, const Matrix& m) {
        const fs::path p = ctx.out(name);
        rotsense::write_file_bytes(p, rotsense::encode_npy(m));
        ctx.note(p, "matrix");
        files[name] = "matrix";
    };
    auto put_ints = [&](const std::string& name, const std::vector<int>& v) {
        write_int_column(ctx.out(name), v);
        files[name] = "int_column";
    };
    auto put_texts = [&](const std::string& name, const std::vector<std::string>& v) {
        rotsense::save_jsonl_texts(ctx.out(name), v);
        files[name] = "jsonl";
    };

    json params = {{"kind", kind}, {"n", n}, {"d", d}};
    if (kind == "gaussian_null") {
        put_matrix("embeddings.npy", rotsense::make_gaussian_null(n, d, rng).data);
    } else if (kind == "gmm") {
        const auto a = rotsense::make_gmm(n, d, rng);
        put_matrix("embeddings.npy", a.data);
        put_ints("labels.txt", *a.labels);
    } else if (kind == "planted") {
        const Index k = ctx.integer("k");
        const double sigma = ctx.has("sigma") ? ctx.real("sigma") : 0.1;
        const auto family = rotsense::parse_kurtosis_family(ctx.text("family"));
        const auto p = rotsense::make_planted_concepts(n, d, k, family, sigma, rng);
        put_matrix("embeddings.npy", p.A.data);
        put_matrix("truth_Y.npy", p.Y);
        put_matrix("truth_Z.npy", p.Z);
        params["k"] = k;
        params["sigma"] = sigma;
        params["family"] = rotsense::to_string(family);
    } else if (kind == "spurious") {
        rotsense::SpuriousBenchmarkOptions o;
        o.n = n;
        o.d = d;
        if (ctx.has("sigma")) o.sigma = ctx.real("sigma");
        o.minority = ctx.real("minority");
        const auto b = rotsense::make_spurious_benchmark(o, rng);
        put_matrix("embeddings.npy", b.A.data);
        put_ints("labels.txt", *b.A.labels);
        put_ints("groups.txt", *b.A.groups);
        put_matrix("prompts.npy", b.prompts.embeddings);
        put_texts("prompt_names.jsonl", b.prompts.class_names);
        put_texts("target_texts.jsonl", b.target.descriptions);
        put_matrix("target_embeddings.npy", b.target.embeddings);
        put_texts("spurious_texts.jsonl", b.spurious.descriptions);
        put_matrix("spurious_embeddings.npy", b.spurious.embeddings);
        put_matrix("truth_concepts.npy", b.concepts);
        put_matrix("truth_background.npy", b.background);
        params["k"] = b.k;
        params["sigma"] = o.sigma;
        params["minority"] = o.minority;
    } else {
        throw InputError("--kind must be gaussian_null, gmm, planted or spurious");
    }
    ctx.write_json("synth", {{"params", params}, {"files", files}});
    std::ostringstream md;
    md << "Generated `" << kind << "` data (" << n << " x " << d << ").\n\n";
    for (const auto& [name, type] : files.items()) md << "- `" << name << "` (" << type.get<std::string>() << ")\n";
    ctx.write_md("synth", md.str());
    return 0;
}

// ---------------------------------------------------------------------------
// Artifact verification (--verify)
// ---------------------------------------------------------------------------

void verify_artifacts(const Context& ctx) {
    for (const auto& w : ctx.written) {
        const std::string where = "verify " + w.path.string() + ": ";
        if (w.kind == "json") {
            json doc;
            try {
                doc = json::parse(rotsense::read_file_bytes(w.path));
            } catch (const json::exception& e) {
                throw NumericError(where + "unreadable JSON: " + e.what());
            }
            if (doc.value("config_hash", "") != ctx.config_hash) throw NumericError(where + "config hash mismatch");
            if (ctx.command == "test") {
                const auto r = rotsense::report_from_json(doc.at("result"));
                rotsense::validate_report(r);
            }
        } else if (w.kind == "model") {
            const auto m = rotsense::load_model(w.path);
            if (rotsense::orthonormality_residual(m.Y) > 1e-8) throw NumericError(where + "dictionary is not orthonormal");
        } else if (w.kind == "report") {
            rotsense::validate_report(rotsense::load_report(w.path));
        } else if (w.kind == "matrix") {
            if (!load_plain_matrix(w.path).allFinite()) throw NumericError(where + "non-finite entries");
        } else if (w.kind == "md") {
            if (rotsense::read_file_bytes(w.path).find(ctx.config_hash) == std::string::npos)
                throw NumericError(where + "config hash missing");
        }
    }
    std::cerr << "verified " << ctx.written.size() << " artifact(s)\n";
}

// ---------------------------------------------------------------------------
// Command table
// ---------------------------------------------------------------------------

struct Command {
    std::string name;
    std::string help;
    std::string example;
    std::vector<Spec> specs;
    std::function<int(Context&)> run;
};

std::vector<Command> commands() {
    const Spec input{"input", Type::path, nullptr, "embedding matrix (.npy, .csv, .rsb)"};
    const Spec input_format{"input_format", Type::text, nullptr, "override format detection: npy, csv or rawbin"};
    const Spec eps{"eps", Type::real, 1e-8, "degree-normalisation floor"};
    const Spec model{"model", Type::path, nullptr, "concept model written by decompose"};
    const Spec test_norm{"norm_mode", Type::text, "none", "normalisation before the SVD: none, l2_rows or degree"};
    const Spec concept_norm{"norm_mode", Type::text, "degree", "normalisation before the SVD: none, l2_rows or degree"};
    const std::vector<Spec> test_common = {
        input,
        input_format,
        test_norm,
        eps,
        {"resamples", Type::integer, 199, "Monte-Carlo resamples (>= 19)"},
        {"p_convention", Type::text, "standard_mc", "p-value convention: standard_mc or paper"},
        {"drop_leading", Type::boolean, true, "drop the leading singular component first"},
        {"resample_method", Type::text, "uniform_direction", "uniform_direction or explicit_rotation"},
    };
    auto test_specs = test_common;
    test_specs.insert(test_specs.begin() + 1, Spec{"k", Type::integer, 20, "number of singular vectors tested"});
    auto sweep_specs = test_common;
    sweep_specs.insert(sweep_specs.begin() + 1, Spec{"ks", Type::text, nullptr, "comma-separated ranks, e.g. 2,5,10,20"});

    return {
        {"test", "Monte-Carlo test for rotation-sensitive structure",
         "rotsense test --input noise.npy --k 20 --resamples 199 --seed 7", with_varimax(test_specs), cmd_test},
        {"ranksweep", "run the test at several ranks", "rotsense ranksweep --input emb.npy --ks 2,5,10,20",
         with_varimax(sweep_specs), cmd_ranksweep},
        {"decompose", "varimax-rotated truncated SVD concept decomposition",
         "rotsense decompose --input emb.npy --k 50 --norm-mode degree",
         with_varimax({input, input_format, {"k", Type::integer, 50, "number of concepts"}, concept_norm, eps,
                       {"canonicalize", Type::boolean, true, "fix concept signs and order"}}),
         cmd_decompose},
        {"interpret", "top images and descriptions per concept",
         "rotsense interpret --model out/model.rsb --texts texts.jsonl --text-embeddings texts.npy --r 5",
         {model,
          {"texts", Type::path, nullptr, "JSON lines with a \"text\" field"},
          {"text_embeddings", Type::path, nullptr, "embedding matrix of the texts"},
          {"r", Type::integer, 5, "items reported per concept"}},
         cmd_interpret},
        {"arith", "weighted sum of concept directions and its top matches",
         "rotsense arith --model out/model.rsb --terms 3:1,5:-1,7:1 --input emb.npy",
         {model,
          {"terms", Type::text, nullptr, "index:weight pairs, comma separated"},
          input,
          {"texts", Type::path, nullptr, "optional texts (JSON lines) to score"},
          {"text_embeddings", Type::path, nullptr, "embedding matrix of the texts"},
          {"top", Type::integer, 5, "matches reported"}},
         cmd_arith},
        {"spurious", "flag concepts aligned with a spurious text corpus",
         "rotsense spurious --model out/model.rsb --target-texts t.jsonl --target-embeddings t.npy "
         "--spurious-texts s.jsonl --spurious-embeddings s.npy",
         {model,
          {"target_texts", Type::path, nullptr, "target descriptions (JSON lines)"},
          {"target_embeddings", Type::path, nullptr, "target description embeddings"},
          {"spurious_texts", Type::path, nullptr, "spurious descriptions (JSON lines)"},
          {"spurious_embeddings", Type::path, nullptr, "spurious description embeddings"},
          {"margin", Type::real, 0.05, "flag when spurious_sim - target_sim exceeds this"},
          input,
          {"prompts", Type::path, nullptr, "class prompt embeddings for the zero-shot check"},
          {"prompt_names", Type::path, nullptr, "class names (JSON lines)"},
          {"labels", Type::path, nullptr, "class labels, one integer per line"},
          {"groups", Type::path, nullptr, "group tags, one integer per line"},
          {"invert", Type::boolean, true, "map the cleaned embeddings back to the input scale"}},
         cmd_spurious},
        {"reconstruct", "rebuild embeddings without selected concepts",
         "rotsense reconstruct --model out/model.rsb --remove-from out/spurious.json --input emb.npy",
         {model,
          {"remove", Type::text, nullptr, "comma-separated concept indices"},
          {"remove_from", Type::path, nullptr, "spurious.json whose flagged concepts are removed"},
          {"invert", Type::boolean, true, "undo the normalisation"},
          {"output_format", Type::text, "rawbin", "npy, csv or rawbin"},
          input},
         cmd_reconstruct},
        {"fidelity", "reconstruction fidelity versus number of concepts",
         "rotsense fidelity --input emb.npy --ks 5,10,20,50",
         with_varimax({input, input_format, {"ks", Type::text, nullptr, "comma-separated ranks"}, concept_norm, eps}),
         cmd_fidelity},
        {"zershot", "zero-shot classification and group metrics",
         "rotsense zershot --input emb.npy --prompts prompts.npy --labels labels.txt --groups groups.txt",
         {input,
          input_format,
          {"prompts", Type::path, nullptr, "class prompt embeddings"},
          {"prompt_names", Type::path, nullptr, "class names (JSON lines)"},
          {"labels", Type::path, nullptr, "class labels, one integer per line"},
          {"groups", Type::path, nullptr, "group tags, one integer per line"}},
         cmd_zershot},
        {"synth", "write a synthetic data set with ground-truth sidecars",
         "rotsense synth --kind spurious --n 2000 --d 64 --output-dir bench",
         {{"kind", Type::text, "gaussian_null", "gaussian_null, gmm, planted or spurious"},
          {"n", Type::integer, 2000, "samples"},
          {"d", Type::integer, 64, "embedding width"},
          {"k", Type::integer, 6, "planted concepts (planted)"},
          {"family", Type::text, "two_point", "two_point or exponential (planted)"},
          {"sigma", Type::real, nullptr, "noise level (planted: 0.1, spurious: 0.3)"},
          {"minority", Type::real, 0.1, "minority-group fraction (spurious)"}},
         cmd_synth},
    };
}

// Raw flag values as typed on the command line, keyed by spec key.
struct FlagStore {
    std::map<std::string, std::string> text;
    std::map<std::string, int> flags;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"rotsense: rotation-sensitivity testing and varimax concept decomposition"};
    app.require_subcommand(1);
    app.fallthrough();
    app.footer("Exit codes: 0 success, 2 input error, 3 numeric failure.\n"
               "Options may also come from a TOML file (--config): top-level keys apply to every\n"
               "subcommand and a [subcommand] table overrides them; flags override both.");

    std::uint64_t seed_flag = 0;
    unsigned threads_flag = 1;
    std::string config_path, out_dir_flag, format_flag;
    bool verify = false;
    auto* seed_opt = app.add_option("--seed", seed_flag, "master random seed (default 0)");
    app.add_option("--config", config_path, "TOML configuration file");
    auto* threads_opt = app.add_option("--threads", threads_flag, "worker threads (default 1)")->check(CLI::PositiveNumber);
    auto* out_opt = app.add_option("--output-dir", out_dir_flag, "directory for artifacts (default .)");
    auto* format_opt =
        app.add_option("--format", format_flag, "report format: json, md or both")->check(CLI::IsMember({"json", "md", "both"}));
    app.add_flag("--verify", verify, "re-read written artifacts and check their invariants");

    const auto table = commands();
    std::vector<FlagStore> stores(table.size());
    std::vector<CLI::App*> subs;
    for (std::size_t c = 0; c < table.size(); ++c) {
        auto* sub = app.add_subcommand(table[c].name, table[c].help);
        sub->footer("Example:\n  " + table[c].example);
        for (const auto& s : table[c].specs) {
            std::string help = s.help;
            if (!s.def.is_null()) help += " (default " + (s.def.is_string() ? s.def.get<std::string>() : s.def.dump()) + ")";
            if (s.type == Type::boolean) {
                const std::string f = flag_name(s.key);
                sub->add_flag(f + ",!--no-" + f.substr(2), stores[c].flags[s.key], help);
            } else {
                sub->add_option(flag_name(s.key), stores[c].text[s.key], help);
            }
        }
        subs.push_back(sub);
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    std::size_t ci = 0;
    while (ci < subs.size() && !subs[ci]->parsed()) ++ci;
    const Command& cmd = table[ci];

    Context ctx;
    ctx.command = cmd.name;
    try {
        toml::table cfg;
        if (!config_path.empty()) {
            try {
                cfg = toml::parse_file(config_path);
            } catch (const toml::parse_error& e) {
                throw InputError("config " + config_path + ": " + std::string(e.description()));
            }
        }
        const toml::table* section = cfg[cmd.name].as_table();
        auto lookup = [&](const std::string& key) -> std::pair<const toml::node*, std::string> {
            if (section)
                if (const toml::node* n = section->get(key)) return {n, "[" + cmd.name + "]"};
            if (const toml::node* n = cfg.get(key); n && !n->is_table()) return {n, "top level"};
            return {nullptr, ""};
        };

        ctx.config = json::object();
        for (const auto& s : cmd.specs) {
            json v = s.def;
            if (auto [node, where] = lookup(s.key); node) v = convert_toml(s, *node, where);
            if (s.type == Type::boolean) {
                const int f = stores[ci].flags[s.key];
                if (f != 0) v = f > 0;
            } else if (subs[ci]->count(flag_name(s.key)) > 0) {
                v = convert_text(s, stores[ci].text[s.key]);
            }
            ctx.config[s.key] = v;
        }

        const Spec seed_spec{"seed", Type::integer, 0, ""};
        const Spec threads_spec{"threads", Type::integer, 1, ""};
        const Spec out_spec{"output_dir", Type::text, ".", ""};
        const Spec format_spec{"format", Type::text, "both", ""};
        if (auto [node, where] = lookup("seed"); node) ctx.seed = convert_toml(seed_spec, *node, where).get<std::uint64_t>();
        if (seed_opt->count()) ctx.seed = seed_flag;
        if (auto [node, where] = lookup("threads"); node) ctx.threads = convert_toml(threads_spec, *node, where).get<unsigned>();
        if (threads_opt->count()) ctx.threads = threads_flag;
        if (auto [node, where] = lookup("output_dir"); node) ctx.out_dir = convert_toml(out_spec, *node, where).get<std::string>();
        if (out_opt->count()) ctx.out_dir = out_dir_flag;
        if (auto [node, where] = lookup("format"); node) ctx.format = convert_toml(format_spec, *node, where).get<std::string>();
        if (format_opt->count()) ctx.format = format_flag;
        rotsense::require(ctx.threads >= 1, "--threads must be >= 1");
        rotsense::require(ctx.format == "json" || ctx.format == "md" || ctx.format == "both", "--format must be json, md or both");
        ctx.verify = verify;

        // Threads, output location and report format do not change results and
        // stay out of the hash.
        ctx.config["seed"] = ctx.seed;
        ctx.config_hash = hash_config(ctx.config);

        for (const auto& s : cmd.specs)
            if (s.type == Type::path && ctx.has(s.key) && !fs::exists(ctx.text(s.key)))
                throw InputError(flag_name(s.key) + ": no such file '" + ctx.text(s.key) + "'");
        fs::create_directories(ctx.out_dir);

        const int rc = cmd.run(ctx);
        if (ctx.verify) verify_artifacts(ctx);
        return rc;
    } catch (const rotsense::Error& e) {
        std::cerr << "rotsense " << cmd.name << ": "
                  << (e.kind() == rotsense::Error::Kind::input ? "input error: " : "numeric error: ") << e.what() << "\n";
        return e.kind() == rotsense::Error::Kind::input ? 2 : 3;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "rotsense " << cmd.name << ": input error: " << e.what() << "\n";
        return 2;
    } catch (const json::exception& e) {
        std::cerr << "rotsense " << cmd.name << ": input error: " << e.what() << "\n";
        return 2;
    }
}
