#include "psyinn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>

#include "psyinn/config.hpp"
#include "psyinn/dataset.hpp"
#include "psyinn/error.hpp"
#include "psyinn/evaluation.hpp"
#include "psyinn/svg.hpp"
#include "psyinn/synth.hpp"
#include "psyinn/textio.hpp"
#include "psyinn/trainer.hpp"

namespace fs = std::filesystem;

namespace psyinn::cli {

using ad::Tensor;

// ---- manifest -----------------------------------------------------------------

void write_manifest(std::ostream& out, const ModelManifest& m) {
  out << "format=psyinn-model v1\n";
  out << "kind=psyinn\n";
  out << "form=" << m.form.name() << '\n';
  out << "bias_column=" << (m.bias_column ? "true" : "false") << '\n';
  out << "tag=" << m.tag << '\n';
  out << "predictor=" << m.predictor << '\n';
  out << "lambda=" << m.lambda << '\n';
  if (!m.baseline.empty()) out << "baseline=" << m.baseline << '\n';
}

ModelManifest read_manifest(std::istream& in) {
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw SchemaError("model manifest: expected key=value");
    kv[std::string(t.substr(0, eq))] = std::string(t.substr(eq + 1));
  }
  if (kv["format"] != "psyinn-model v1") throw SchemaError("model manifest: unsupported format '" + kv["format"] + "'");
  for (const char* k : {"form", "bias_column", "predictor", "lambda"}) {
    if (!kv.count(k)) throw SchemaError(std::string("model manifest: missing ") + k);
  }
  ModelManifest m;
  m.form = eq::EquationForm::parse(kv["form"]);
  m.bias_column = kv["bias_column"] == "true";
  m.tag = kv["tag"];
  m.predictor = kv["predictor"];
  m.lambda = kv["lambda"];
  m.baseline = kv["baseline"];
  return m;
}

namespace {

std::ifstream open_in(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Error("cannot open " + p.string());
  return in;
}

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw Error("cannot write " + p.string());
  return out;
}

std::string first_line(const fs::path& p) {
  auto in = open_in(p);
  std::string line;
  std::getline(in, line);
  return std::string(text::trim(line));
}

}  // namespace

LoadedModel load_model(const std::string& manifest_path) {
  const fs::path path(manifest_path);
  const fs::path dir = path.parent_path();
  auto in = open_in(path);
  LoadedModel m;
  m.manifest = read_manifest(in);
  auto ck = open_in(dir / m.manifest.predictor);
  m.equation.predictor = nn::load_checkpoint(ck);
  auto lc = open_in(dir / m.manifest.lambda);
  m.equation.lambda.lambda = sr::read_lambda_csv(lc, &m.terms);
  m.equation.form = m.manifest.form;
  m.equation.bias_column = m.manifest.bias_column;
  const std::size_t width = sr::descriptor_width(m.equation.predictor.config.n_features, m.manifest.bias_column);
  if (m.equation.lambda.lambda.rows() != width || m.equation.lambda.lambda.cols() != m.manifest.form.z()) {
    throw SchemaError("model: lambda shape " + m.equation.lambda.lambda.shape_str() + " does not fit the predictor");
  }
  if (!m.manifest.baseline.empty()) {
    auto bl = open_in(dir / m.manifest.baseline);
    m.baseline = eq::load_baseline(bl);
  }
  return m;
}

// ---- equation text ------------------------------------------------------------

namespace {

std::string coef(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string expression(const Tensor& lambda, std::size_t col, const std::vector<std::string>& terms) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < lambda.rows(); ++i) {
    if (lambda(i, col) != 0.0) rows.push_back(i);
  }
  std::stable_sort(rows.begin(), rows.end(),
                   [&](std::size_t a, std::size_t b) { return std::abs(lambda(a, col)) > std::abs(lambda(b, col)); });
  if (rows.empty()) return "0";
  std::string s;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const double w = lambda(rows[k], col);
    if (k == 0)
      s += coef(w);
    else
      s += (w < 0 ? " - " : " + ") + coef(std::abs(w));
    s += "*" + terms[rows[k]];
  }
  return s;
}

void parse_expression(std::string_view expr, std::size_t col, const std::vector<std::string>& terms, Tensor& lambda) {
  expr = text::trim(expr);
  if (expr == "0") return;
  std::vector<std::pair<double, std::string>> parts;
  double sign = 1.0;
  while (!expr.empty()) {
    std::size_t cut = std::string_view::npos;
    double next_sign = 1.0;
    const auto plus = expr.find(" + "), minus = expr.find(" - ");
    if (plus < minus) {
      cut = plus;
    } else if (minus != std::string_view::npos) {
      cut = minus;
      next_sign = -1.0;
    }
    const std::string_view term = expr.substr(0, cut);
    const auto star = term.find('*');
    if (star == std::string_view::npos) throw Error("equation text: term without '*': " + std::string(term));
    const std::string name(text::trim(term.substr(star + 1)));
    const auto it = std::find(terms.begin(), terms.end(), name);
    if (it == terms.end()) throw Error("equation text: unknown term '" + name + "'");
    lambda(static_cast<std::size_t>(it - terms.begin()), col) =
        sign * text::to_double(text::trim(term.substr(0, star)), "coefficient");
    if (cut == std::string_view::npos) break;
    expr = expr.substr(cut + 3);
    sign = next_sign;
  }
}

}  // namespace

std::string render_equation(const eq::EquationForm& form, const Tensor& lambda, const std::vector<std::string>& terms) {
  if (terms.size() != lambda.rows() || lambda.cols() != form.z()) {
    throw ShapeError("render_equation: lambda " + lambda.shape_str() + " does not match the term list and form");
  }
  std::ostringstream s;
  s << "form: " << form.name() << '\n';
  switch (form.kind) {
    case eq::FormKind::HLR:
      s << "p = 2^(-delta / h)\n";
      s << "h = 2^(" << expression(lambda, 0, terms) << ")\n";
      break;
    case eq::FormKind::Wickelgren:
      s << "p = sigmoid(d1) * (1 + softplus(d2) * delta)^(-softplus(d3))\n";
      break;
    case eq::FormKind::ACTR:
      s << "p = sigmoid(d1 - softplus(d2) * ln(1 + delta))\n";
      break;
  }
  if (form.kind != eq::FormKind::HLR) {
    for (std::size_t j = 0; j < form.z(); ++j) s << 'd' << (j + 1) << " = " << expression(lambda, j, terms) << '\n';
  }
  return s.str();
}

ParsedEquation parse_equation(const std::string& rendered, const std::vector<std::string>& terms) {
  std::istringstream in(rendered);
  std::string line;
  std::optional<eq::EquationForm> form;
  std::vector<std::pair<std::size_t, std::string>> exprs;
  while (std::getline(in, line)) {
    const std::string_view t = text::trim(line);
    if (t.rfind("form:", 0) == 0) {
      form = eq::EquationForm::parse(text::trim(t.substr(5)));
    } else if (t.rfind("h = 2^(", 0) == 0 && t.back() == ')') {
      exprs.emplace_back(0, std::string(t.substr(7, t.size() - 8)));
    } else if (t.size() > 4 && t[0] == 'd' && t.find(" = ") != std::string_view::npos) {
      const auto eq = t.find(" = ");
      exprs.emplace_back(static_cast<std::size_t>(text::to_int(t.substr(1, eq - 1), "descriptor index") - 1),
                         std::string(t.substr(eq + 3)));
    }
  }
  if (!form) throw Error("equation text: missing 'form:' line");
  ParsedEquation out{*form, Tensor(terms.size(), form->z())};
  for (const auto& [col, e] : exprs) {
    if (col >= form->z()) throw Error("equation text: descriptor index out of range");
    parse_expression(e, col, terms, out.lambda);
  }
  return out;
}

// ---- commands -------------------------------------------------------------------

namespace {

std::vector<data::LearnerSequence> load_corpus(const std::string& path) {
  auto in = open_in(path);
  return data::read_corpus(in);
}

void write_corpus_file(const fs::path& p, const std::vector<data::LearnerSequence>& seqs) {
  auto out = open_out(p);
  data::write_corpus(out, seqs);
}

void write_lambda_file(const fs::path& p, const Tensor& lambda, bool bias_column) {
  auto out = open_out(p);
  sr::write_lambda_csv(out, lambda, sr::term_names(data::feature_names(), bias_column));
}

void write_checkpoint_file(const fs::path& p, const nn::PredictorParameters& params) {
  auto out = open_out(p);
  nn::save_checkpoint(params, out);
}

int cmd_ingest(const std::string& input, const std::string& schema, const std::string& output, std::ostream& out) {
  auto in = open_in(input);
  const auto parsed = data::parse_log(in, data::ColumnMap::parse(schema));
  const auto seqs = data::featurize(parsed.records);
  write_corpus_file(output, seqs);
  out << "ingested " << parsed.records.size() << " rows into " << seqs.size() << " learners; rejected "
      << parsed.rejected.size() << '\n';
  for (const auto& r : parsed.rejected) out << "  line " << r.line << ": " << r.message << '\n';
  return 0;
}

int cmd_synth(const cfg::RunConfig& config, const std::string& output, std::string truth_path, std::ostream& out) {
  const auto sc = config.synth();
  const auto result = data::synthesize(sc);
  write_corpus_file(output, result.sequences);
  if (truth_path.empty()) truth_path = output + ".truth";
  auto t = open_out(truth_path);
  eq::save_baseline(result.truth, t);
  out << "synthesized " << sc.learners << " learners x " << sc.steps_per_learner << " steps -> " << output << '\n';
  return 0;
}

int cmd_train(const cfg::RunConfig& config, const std::string& corpus, const fs::path& outdir, std::ostream& out) {
  const auto tc = config.trainer();
  const auto split = data::split(load_corpus(corpus), config.split_ratios(),
                                 static_cast<std::uint64_t>(config.get_int("split_seed")));
  fs::create_directories(outdir);
  write_corpus_file(outdir / "train.tsv", split.train);
  write_corpus_file(outdir / "validation.tsv", split.validation);
  write_corpus_file(outdir / "test.tsv", split.test);

  const auto trace = train::run(split, tc, [&](const train::TrainingTrace& t) {
    const std::string stem = "round_" + std::to_string(t.rounds);
    write_checkpoint_file(outdir / "checkpoints" / (stem + ".ckpt"), t.theta);
    write_lambda_file(outdir / "checkpoints" / (stem + "_lambda.csv"), t.lambda_bar.lambda, tc.bias_column);
  });

  const auto baseline = eq::fit_baseline(tc.form, split.train, config.baseline_hyper());
  {
    auto b = open_out(outdir / "baseline.txt");
    eq::save_baseline(baseline, b);
  }
  write_checkpoint_file(outdir / "predictor.ckpt", trace.theta);
  write_lambda_file(outdir / "lambda.csv", trace.lambda_last.lambda, tc.bias_column);
  write_lambda_file(outdir / "lambda_bar.csv", trace.lambda_bar.lambda, tc.bias_column);
  {
    auto t = open_out(outdir / ("trace_" + trace.tag + ".csv"));
    train::write_trace(t, trace);
  }
  {
    auto q = open_out(outdir / ("queue_" + trace.tag + ".csv"));
    train::write_snapshots(q, trace);
  }
  ModelManifest m{tc.form, tc.bias_column, trace.tag, "predictor.ckpt", "lambda.csv", "baseline.txt"};
  {
    auto mf = open_out(outdir / "model.txt");
    write_manifest(mf, m);
  }
  out << "trained " << trace.tag << ": " << trace.rounds << " rounds, " << trace.nn_epochs << " nn epochs, "
      << trace.sr_epochs << " sr epochs" << (trace.stopped_early ? " (early stop)" : "") << "; validation MAE "
      << text::fmt(trace.final_val_mae) << '\n';
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& corpus, const std::string& format,
             const std::string& csv_out, std::ostream& out) {
  const auto seqs = load_corpus(corpus);
  std::vector<evaluation::MetricReport> reports;
  if (first_line(model_path).rfind("format=psyinn-baseline", 0) == 0) {
    auto in = open_in(model_path);
    reports.push_back(evaluation::evaluate_model(eq::load_baseline(in), seqs, "baseline"));
  } else {
    const auto m = load_model(model_path);
    const std::string tag = m.manifest.tag.empty() ? "psyinn" : m.manifest.tag;
    reports.push_back(evaluation::evaluate_model(m.equation.predictor, seqs, tag + ":predictor"));
    reports.push_back(evaluation::evaluate_model(m.equation, seqs, tag + ":equation"));
    if (m.baseline) reports.push_back(evaluation::evaluate_model(*m.baseline, seqs, "baseline"));
  }
  if (format == "csv")
    evaluation::write_reports_csv(out, reports);
  else
    evaluation::print_reports(out, reports);
  if (!csv_out.empty()) {
    auto f = open_out(csv_out);
    evaluation::write_reports_csv(f, reports);
  }
  return 0;
}

int cmd_extract(const std::string& model_path, std::ostream& out) {
  const auto m = load_model(model_path);
  out << render_equation(m.manifest.form, m.equation.lambda.lambda, m.terms);
  return 0;
}

struct PlotArgs {
  std::string kind, model, corpus, learner, item, mode = "equation", out;
  std::vector<std::string> traces;
  double horizon = 30.0, step = 1.0;
};

int cmd_plot(const PlotArgs& a, std::ostream& out) {
  const fs::path csv = a.out + ".csv", svg_path = a.out + ".svg";
  if (a.kind == "kstudy") {
    if (a.model.empty() || a.corpus.empty() || a.learner.empty() || a.item.empty()) {
      throw ConfigError("plot kstudy needs --model, --corpus, --learner and --item");
    }
    const auto m = load_model(a.model);
    const auto seqs = load_corpus(a.corpus);
    const auto it = std::find_if(seqs.begin(), seqs.end(), [&](const auto& s) { return s.learner_id == a.learner; });
    if (it == seqs.end()) throw Error("learner '" + a.learner + "' not in corpus");
    std::vector<evaluation::KStudyPoint> curve;
    if (a.mode == "equation")
      curve = evaluation::kstudy_curve(m.equation, *it, a.item, a.horizon, a.step);
    else if (a.mode == "decoder")
      curve = evaluation::kstudy_curve(m.equation.predictor, *it, a.item, a.horizon, a.step);
    else
      throw ConfigError("--mode must be equation or decoder");
    {
      auto f = open_out(csv);
      evaluation::write_kstudy_csv(f, curve);
    }
    svg::Series s{a.learner + " / " + a.item, {}, {}};
    for (const auto& p : curve) {
      s.x.push_back(p.day);
      s.y.push_back(p.recall);
    }
    auto f = open_out(svg_path);
    svg::line_plot(f, "K-study curve (" + a.mode + ")", "days", "predicted recall", std::span(&s, 1));
  } else if (a.kind == "heatmap") {
    if (a.model.empty()) throw ConfigError("plot heatmap needs --model");
    const auto m = load_model(a.model);
    const auto table = evaluation::weight_heatmap_export(m.equation.lambda.lambda, m.terms);
    {
      auto f = open_out(csv);
      evaluation::write_heatmap_csv(f, table);
    }
    {
      auto f = open_out(a.out + "_mass.csv");
      evaluation::write_mass_csv(f, table);
    }
    auto f = open_out(svg_path);
    svg::heatmap(f, "Descriptor weights", table.row_names, table.col_names, table.values);
  } else if (a.kind == "trace") {
    if (a.traces.empty()) throw ConfigError("plot trace needs at least one --trace");
    std::vector<svg::Series> series;
    auto f = open_out(csv);
    f << "tag,epoch,L_T\n";
    for (const auto& path : a.traces) {
      auto in = open_in(path);
      std::string line;
      std::getline(in, line);
      const auto header = text::split(text::trim(line), ',');
      const auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw SchemaError(path + ": missing column " + name);
        return static_cast<std::size_t>(it - header.begin());
      };
      const std::size_t c_tag = col("tag"), c_epoch = col("epoch"), c_lt = col("L_T");
      svg::Series s;
      while (std::getline(in, line)) {
        if (text::trim(line).empty()) continue;
        const auto cells = text::split(text::trim(line), ',');
        if (cells.size() != header.size()) throw SchemaError(path + ": wrong field count");
        s.name = cells[c_tag];
        s.x.push_back(text::to_double(cells[c_epoch], "epoch"));
        s.y.push_back(text::to_double(cells[c_lt], "L_T"));
        f << cells[c_tag] << ',' << cells[c_epoch] << ',' << cells[c_lt] << '\n';
      }
      series.push_back(std::move(s));
    }
    auto g = open_out(svg_path);
    svg::line_plot(g, "Training loss", "epoch", "L_T", series);
  } else {
    throw ConfigError("--kind must be kstudy, heatmap or trace");
  }
  out << "wrote " << csv.string() << " and " << svg_path.string() << '\n';
  return 0;
}

std::string one_line(std::string s) {
  std::replace(s.begin(), s.end(), '\n', ' ');
  std::replace(s.begin(), s.end(), '\r', ' ');
  return s;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"psyinn: recall prediction with evolving memory equations"};
  app.require_subcommand(1);

  std::string input, schema, output, config_path, corpus, outdir, truth, model, strategy, format = "table", csv_out;
  std::vector<std::string> overrides;
  bool no_queue = false, no_alternate = false, nn_only = false, sr_only = false;
  PlotArgs plot;

  auto* ingest = app.add_subcommand("ingest", "Featurize an interaction log into a corpus");
  ingest->add_option("--input", input, "Tab or comma separated log")->required();
  ingest->add_option("--schema", schema, "Column overrides, field=column,...");
  ingest->add_option("--out", output, "Corpus path")->required();

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus and its truth file");
  synth->add_option("--config", config_path)->required();
  synth->add_option("--out", output, "Corpus path")->required();
  synth->add_option("--truth", truth, "Truth path (default <out>.truth)");
  synth->add_option("--set", overrides, "key=value override");

  auto* trn = app.add_subcommand("train", "Train a model");
  trn->add_option("--config", config_path)->required();
  trn->add_option("--corpus", corpus)->required();
  trn->add_option("--outdir", outdir)->required();
  trn->add_option("--set", overrides, "key=value override");
  trn->add_option("--strategy", strategy, "best, random or direct");
  trn->add_flag("--no-queue", no_queue, "Use each round's matrix directly");
  trn->add_flag("--no-alternate", no_alternate, "Step both blocks jointly");
  trn->add_flag("--nn-only", nn_only, "Predictor only");
  trn->add_flag("--sr-only", sr_only, "Sparse regression only, predictor frozen");

  auto* ev = app.add_subcommand("eval", "Report MAE and MAPE");
  ev->add_option("--model", model, "model.txt or a baseline file")->required();
  ev->add_option("--corpus", corpus)->required();
  ev->add_option("--format", format, "table or csv")->check(CLI::IsMember({"table", "csv"}));
  ev->add_option("--out", csv_out, "Also write the report as CSV");

  auto* ex = app.add_subcommand("extract", "Print the fitted equation");
  ex->add_option("--model", model)->required();

  auto* pl = app.add_subcommand("plot", "Write plot data as CSV and SVG");
  pl->add_option("--kind", plot.kind)->required()->check(CLI::IsMember({"kstudy", "heatmap", "trace"}));
  pl->add_option("--out", plot.out, "Output prefix")->required();
  pl->add_option("--model", plot.model);
  pl->add_option("--corpus", plot.corpus);
  pl->add_option("--learner", plot.learner);
  pl->add_option("--item", plot.item);
  pl->add_option("--mode", plot.mode, "equation or decoder");
  pl->add_option("--horizon", plot.horizon, "Days");
  pl->add_option("--step", plot.step, "Days");
  pl->add_option("--trace", plot.traces, "Trace CSV (repeatable)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e, out, err);
    err << "error: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    auto load_config = [&] {
      auto c = cfg::RunConfig::load(config_path);
      for (const auto& o : overrides) c.set(o);
      return c;
    };
    if (ingest->parsed()) return cmd_ingest(input, schema, output, out);
    if (synth->parsed()) return cmd_synth(load_config(), output, truth, out);
    if (trn->parsed()) {
      auto c = load_config();
      if (!strategy.empty()) c.set("strategy", strategy);
      if (no_queue) c.set("strategy", "direct");
      if (no_alternate) c.set("alternate", "false");
      if (nn_only && sr_only) throw ConfigError("--nn-only and --sr-only are exclusive");
      if (nn_only) c.set("train_sr", "false");
      if (sr_only) c.set("train_nn", "false");
      return cmd_train(c, corpus, outdir, out);
    }
    if (ev->parsed()) return cmd_eval(model, corpus, format, csv_out, out);
    if (ex->parsed()) return cmd_extract(model, out);
    if (pl->parsed()) return cmd_plot(plot, out);
  } catch (const std::exception& e) {
    err << "error: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 1;
}

}  // namespace psyinn::cli
