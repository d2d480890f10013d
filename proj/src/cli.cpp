#include "bware/cli.hpp"

#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "bware/cframe.hpp"
#include "bware/cla.hpp"
#include "bware/morph.hpp"
#include "bware/planner.hpp"
#include "bware/tio.hpp"
#include "bware/transform.hpp"
#include "json.hpp"

namespace bware {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const char* width_label(MapWidth w) {
  switch (w) {
    case MapWidth::W0: return "0";
    case MapWidth::W1bit: return "1bit";
    case MapWidth::W1B: return "1B";
    case MapWidth::W2B: return "2B";
    case MapWidth::W3B: return "3B";
    case MapWidth::W4B: return "4B";
  }
  return "?";
}

const char* kind_label(TiledKind k) {
  switch (k) {
    case TiledKind::MATRIX: return "matrix";
    case TiledKind::CMATRIX: return "compressed matrix";
    case TiledKind::CFRAME: return "compressed frame";
  }
  return "?";
}

double now_ms() {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

bool is_tiled(const std::string& p) { return fs::exists(fs::path(p) / "meta.bwt"); }

void check_input(const std::string& p) {
  if (!fs::exists(p)) throw IoError("input not found: " + p);
}

// The output's parent must exist and be writable; an existing output must be a directory.
void check_output_dir(const std::string& p) {
  fs::path out = fs::absolute(p);
  fs::path parent = out.parent_path();
  if (!fs::is_directory(parent) || ::access(parent.c_str(), W_OK) != 0)
    throw IoError("output directory not writable: " + parent.string());
  if (fs::exists(out) && !fs::is_directory(out)) throw IoError("output exists and is not a directory: " + out.string());
  if (fs::exists(out) && ::access(out.c_str(), W_OK) != 0) throw IoError("output directory not writable: " + out.string());
}

Matrix numeric_matrix(const Frame& f) {
  TransformSpec spec;
  spec.columns.resize(f.ncols());
  return materialize(transform_encode(f, spec, EncodePath::F_M).matrix);
}

json column_report(const std::string& name, const CompressedColumn& c) {
  json j;
  j["name"] = name;
  j["type"] = to_string(c.type());
  j["compressed"] = c.is_compressed();
  j["d"] = c.is_compressed() ? json(c.distinct()) : json(nullptr);
  j["width"] = c.is_compressed() ? width_label(c.map()->width()) : "-";
  j["bytes"] = column_memory_estimate(c);
  j["fallback"] = !c.is_compressed();
  return j;
}

json group_report(const ColumnGroup& g) {
  json j;
  j["encoding"] = to_string(g.encoding());
  std::vector<std::uint32_t> cols(g.cols().begin(), g.cols().end());
  j["cols"] = cols;
  j["bytes"] = group_memory_size(g);
  if (auto* d = g.try_as<DdcGroup>()) {
    j["d"] = d->dict.rows();
    j["width"] = width_label(d->map->width());
  } else if (auto* s = g.try_as<SdcGroup>()) {
    j["d"] = s->dict.rows();
    j["width"] = width_label(s->map->width());
  }
  return j;
}

std::string cell(const json& v) {
  if (v.is_null()) return "-";
  if (v.is_string()) return v.get<std::string>();
  if (v.is_boolean()) return v.get<bool>() ? "yes" : "no";
  return v.dump();
}

// Fixed-width table of the listed keys.
void print_table(std::ostream& out, const json& rows, const std::vector<std::string>& keys) {
  std::vector<std::size_t> w(keys.size());
  for (std::size_t k = 0; k < keys.size(); ++k) {
    w[k] = keys[k].size();
    for (const auto& r : rows) w[k] = std::max(w[k], cell(r.value(keys[k], json(nullptr))).size());
  }
  for (std::size_t k = 0; k < keys.size(); ++k) out << std::left << std::setw(static_cast<int>(w[k] + 2)) << keys[k];
  out << "\n";
  for (const auto& r : rows) {
    for (std::size_t k = 0; k < keys.size(); ++k)
      out << std::left << std::setw(static_cast<int>(w[k] + 2)) << cell(r.value(keys[k], json(nullptr)));
    out << "\n";
  }
}

void emit(std::ostream& out, const CliConfig& cfg, const json& report, const std::string& table_key,
          const std::vector<std::string>& columns) {
  if (cfg.format == "json") {
    out << report.dump(2) << "\n";
    return;
  }
  for (const auto& [k, v] : report.items())
    if (k != table_key) out << k << ": " << cell(v) << "\n";
  if (report.contains(table_key)) print_table(out, report[table_key], columns);
}

// ---------------------------------------------------------------- commands

int cmd_compress(const CliConfig& cfg, double sample_fraction, std::ostream& out) {
  check_input(cfg.input);
  check_output_dir(cfg.output);
  TiledOptions topts;
  topts.tile_rows = cfg.tile_rows;
  json report;
  report["input"] = cfg.input;
  report["output"] = cfg.output;
  std::optional<CompressedFrame> frame;
  Manifest man;
  if (is_tiled(cfg.input)) {
    // Already tiled: re-tile only.
    report["mode"] = "retile";
    TiledObject obj = read_tiled(cfg.input, {ReadMode::POOLED, cfg.threads});
    man = std::visit([&](const auto& o) { return write_tiled(o, cfg.output, topts); }, obj);
    if (auto* cf = std::get_if<CompressedFrame>(&obj)) frame = std::move(*cf);
  } else {
    report["mode"] = "compress";
    Frame f = read_csv(cfg.input);
    CompressOptions copts;
    copts.sample_fraction = sample_fraction;
    copts.seed = cfg.seed;
    std::size_t raw = 0;
    for (const auto& c : f.columns()) raw += c.payload_bytes();
    report["raw_bytes"] = raw;
    frame = compress_frame(f, copts);
    man = write_tiled(*frame, cfg.output, topts);
  }
  report["rows"] = man.header.nrows;
  report["cols"] = man.header.ncols;
  report["tiles"] = man.dense_tiles + man.sparse_tiles + man.compressed_tiles;
  report["written_bytes"] = man.total_bytes;
  if (frame) {
    json cols = json::array();
    std::size_t fallbacks = 0;
    for (std::size_t j = 0; j < frame->ncols(); ++j) {
      cols.push_back(column_report(frame->names()[j], frame->column(j)));
      fallbacks += !frame->column(j).is_compressed();
    }
    report["compressed_bytes"] = frame_memory_estimate(*frame);
    report["fallbacks"] = fallbacks;
    report["columns"] = cols;
  }
  emit(out, cfg, report, "columns", {"name", "type", "d", "width", "bytes", "fallback"});
  return kExitOk;
}

int cmd_inspect(const CliConfig& cfg, bool detail, std::ostream& out) {
  check_input(cfg.input);
  TiledHeader h = read_header(cfg.input);
  json report;
  report["kind"] = kind_label(h.kind);
  report["rows"] = h.nrows;
  report["cols"] = h.ncols;
  report["tile_rows"] = h.tile_rows;
  report["separate_dict"] = (h.flags & kFlagSeparateDict) != 0;
  report["partitions"] = h.partitions.size();
  std::uint64_t tiles = 0, bytes = 0;
  for (const auto& p : h.partitions) {
    tiles += p.tile_count;
    std::error_code ec;
    bytes += fs::file_size(fs::path(cfg.input) / p.name, ec);
  }
  report["tiles"] = tiles;
  report["bytes_on_disk"] = bytes;
  if (!detail) {
    if (h.kind == TiledKind::CFRAME) {
      json cols = json::array();
      for (std::size_t j = 0; j < h.ncols; ++j) cols.push_back({{"name", h.names[j]}, {"type", to_string(h.schema[j].type)}});
      report["columns"] = cols;
    }
    emit(out, cfg, report, "columns", {"name", "type"});
    return kExitOk;
  }
  ReadCounters k;
  TiledObject obj = read_tiled(cfg.input, {ReadMode::POOLED, cfg.threads}, &k);
  report["morph_combines"] = k.morph_combines;
  report["conversions"] = k.conversions;
  report["fallbacks"] = k.fallbacks;
  if (auto* cf = std::get_if<CompressedFrame>(&obj)) {
    json cols = json::array();
    for (std::size_t j = 0; j < cf->ncols(); ++j) cols.push_back(column_report(cf->names()[j], cf->column(j)));
    report["columns"] = cols;
    emit(out, cfg, report, "columns", {"name", "type", "d", "width", "bytes", "fallback"});
  } else if (auto* cm = std::get_if<CompressedMatrix>(&obj)) {
    json groups = json::array();
    for (const auto& g : cm->groups()) groups.push_back(group_report(g));
    report["memory_bytes"] = cm->memory_size();
    report["groups"] = groups;
    emit(out, cfg, report, "groups", {"encoding", "cols", "d", "width", "bytes"});
  } else {
    report["memory_bytes"] = std::get<Matrix>(obj).memory_bytes();
    emit(out, cfg, report, "", {});
  }
  return kExitOk;
}

int cmd_transform(const CliConfig& cfg, const std::string& route_name, std::ostream& out) {
  check_input(cfg.input);
  check_input(cfg.spec);
  check_output_dir(cfg.output);
  EncodePath route = encode_path_from_string(route_name);
  std::ifstream sf(cfg.spec);
  std::string spec_text((std::istreambuf_iterator<char>(sf)), std::istreambuf_iterator<char>());

  std::optional<Frame> frame;
  std::optional<CompressedFrame> cframe;
  if (is_tiled(cfg.input)) {
    TiledObject obj = read_tiled(cfg.input, {ReadMode::POOLED, cfg.threads});
    auto* cf = std::get_if<CompressedFrame>(&obj);
    if (!cf) throw TypeError("transform expects a frame input, got a matrix");
    cframe = std::move(*cf);
  } else {
    frame = read_csv(cfg.input);
  }
  const auto& names = cframe ? cframe->names() : frame->names();
  TransformSpec spec = parse_transform_spec(spec_text, names, fs::path(cfg.spec).parent_path().string());
  if (route == EncodePath::CF_CM && !cframe) cframe = compress_frame(*frame);
  if (route != EncodePath::CF_CM && !frame) frame = decompress_frame(*cframe);
  double t0 = now_ms();
  EncodeResult res = cframe && route == EncodePath::CF_CM ? transform_encode(*cframe, spec, route)
                                                          : transform_encode(*frame, spec, route);
  double ms = now_ms() - t0;

  std::size_t nrows = cframe ? cframe->nrows() : frame->nrows();
  json cols = json::array();
  double predicted = 0.0;
  const auto* cm = std::get_if<CompressedMatrix>(&res.matrix);
  for (std::size_t j = 0; j < res.meta.columns.size(); ++j) {
    const ColumnMeta& m = res.meta.columns[j];
    std::size_t d = cframe && cframe->column(j).is_compressed()
                        ? cframe->column(j).distinct()
                        : dictionary_code(cframe ? cframe->column(j).decompress() : frame->column(j)).dict.size();
    PathSizes ps = output_size_model(m.spec, nrows, d);
    // CF-CM reuses a map only where the input column is compressed.
    bool reuse = cframe && cframe->column(j).is_compressed();
    double p = route == EncodePath::F_M ? ps.f_m : route == EncodePath::F_CM || !reuse ? ps.f_cm : ps.cf_cm;
    predicted += p;
    json c;
    c["name"] = m.name;
    c["directive"] = std::string(to_string(m.spec.kind)) + (m.spec.dummy ? "+dummy" : "");
    c["d"] = d;
    c["out_cols"] = m.width;
    c["predicted"] = static_cast<std::uint64_t>(p);
    if (cm) {
      std::size_t actual = 0;
      for (const auto& g : cm->groups())
        if (!g.cols().empty() && g.cols()[0] >= m.offset && g.cols()[0] < m.offset + m.width)
          actual += group_memory_size(g);
      c["actual"] = actual;
    }
    cols.push_back(c);
  }
  Manifest man = std::visit(
      [&](const auto& m) -> Manifest {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, SparseMatrix>) return write_tiled(materialize(res.matrix), cfg.output);
        else return write_tiled(m, cfg.output, {cfg.tile_rows, true, 16 * 1024});
      },
      res.matrix);
  std::ofstream(fs::path(cfg.output) / "metaframe.json") << meta_to_json(res.meta) << "\n";

  json report;
  report["path"] = to_string(route);
  report["rows"] = nrows;
  report["cols_out"] = res.meta.ncols_out;
  report["ms"] = ms;
  report["predicted_bytes"] = static_cast<std::uint64_t>(predicted);
  report["actual_bytes"] = encoded_size(res.matrix);
  report["written_bytes"] = man.total_bytes;
  report["columns"] = cols;
  emit(out, cfg, report, "columns", {"name", "directive", "d", "out_cols", "predicted", "actual"});
  return kExitOk;
}

int cmd_morph(const CliConfig& cfg, const WorkloadVector& w, bool show_plan, std::ostream& out) {
  check_input(cfg.input);
  check_output_dir(cfg.output);
  CompressedMatrix input;
  if (is_tiled(cfg.input)) {
    TiledObject obj = read_tiled(cfg.input, {ReadMode::POOLED, cfg.threads});
    if (auto* cm = std::get_if<CompressedMatrix>(&obj)) input = std::move(*cm);
    else if (auto* m = std::get_if<Matrix>(&obj)) input = wrap_uncompressed(*m);
    else throw TypeError("morph expects a matrix input, got a frame");
  } else {
    input = wrap_uncompressed(numeric_matrix(read_csv(cfg.input)));
  }
  MorphOptions mopts;
  mopts.seed = cfg.seed;
  MorphCounters counters;
  MorphPlan plan;
  double t0 = now_ms();
  CompressedMatrix result = morph(input, w, mopts, &counters, &plan);
  double ms = now_ms() - t0;
  Manifest man = write_tiled(result, cfg.output, {cfg.tile_rows, true, 16 * 1024});
  json groups = json::array();
  for (const auto& g : result.groups()) groups.push_back(group_report(g));
  json report;
  report["rows"] = result.nrows();
  report["cols"] = result.ncols();
  report["ms"] = ms;
  report["groups_before"] = input.groups().size();
  report["groups_after"] = result.groups().size();
  report["bytes_before"] = input.memory_size();
  report["bytes_after"] = result.memory_size();
  report["merges"] = plan.merges;
  report["combines"] = counters.combines;
  report["conversions"] = counters.conversions;
  report["fallbacks"] = counters.fallbacks;
  report["written_bytes"] = man.total_bytes;
  if (show_plan) report["plan"] = json::parse(plan_to_json(plan));
  report["groups"] = groups;
  emit(out, cfg, report, "groups", {"encoding", "cols", "d", "width", "bytes"});
  return kExitOk;
}

double model_difference(const ExecResult& a, const ExecResult& b) {
  if (a.models.size() != b.models.size()) return INFINITY;
  double worst = 0.0;
  for (std::size_t i = 0; i < a.models.size(); ++i) {
    if (a.models[i].bindings != b.models[i].bindings) return INFINITY;
    worst = std::max(worst, max_relative_error(a.models[i].beta, b.models[i].beta));
  }
  return worst;
}

int cmd_run(const CliConfig& cfg, bool no_inject, bool compare, const std::string& metrics_path, bool show_plan,
            double tolerance, std::ostream& out) {
  check_input(cfg.input);
  std::ifstream f(cfg.input);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  std::string base = fs::path(cfg.input).parent_path().string();
  PipelineGraph g = parse_pipeline(text, base.empty() ? "." : base);
  PipelineGraph planned = no_inject ? g : inject_morphs(g, extract_workload(g));
  if (show_plan) out << planned.to_text();
  ExecOptions eopts;
  eopts.threads = cfg.threads;
  ExecResult r = execute(planned, eopts);

  if (!metrics_path.empty()) {
    std::ostream* sink = &out;
    std::ofstream file;
    if (metrics_path != "-") {
      file.open(metrics_path);
      if (!file) throw IoError("cannot write metrics to " + metrics_path);
      sink = &file;
    }
    for (const auto& m : r.metrics) *sink << metric_to_json(m) << "\n";
  }

  json report;
  report["nodes"] = planned.nodes.size();
  report["morphs"] = planned.count(NodeKind::MORPH);
  report["bytes_touched"] = r.bytes_touched;
  json models = json::array();
  for (const auto& m : r.models) {
    double norm = 0.0;
    for (double v : m.beta.values()) norm += v * v;
    models.push_back({{"node", m.node}, {"bindings", m.bindings}, {"iterations", m.iterations},
                      {"coefficients", m.beta.rows()}, {"norm", std::sqrt(norm)}});
  }
  int code = kExitOk;
  if (compare) {
    ExecResult other = execute(no_inject ? inject_morphs(g, extract_workload(g)) : g, eopts);
    double diff = model_difference(r, other);
    report["compare_bytes_touched"] = other.bytes_touched;
    report["max_relative_difference"] = diff;
    report["match"] = diff <= tolerance;
    if (!(diff <= tolerance)) code = kExitValidation;
  }
  report["models"] = models;
  emit(out, cfg, report, "models", {"node", "bindings", "iterations", "coefficients", "norm"});
  return code;
}

// ---------------------------------------------------------------- bench

json bench_sizes(std::size_t n, std::uint64_t seed) {
  json rows = json::array();
  std::mt19937_64 rng(seed);
  for (std::size_t d : {std::size_t{2}, std::size_t{256}, std::size_t{10000}}) {
    std::vector<std::int64_t> v(n);
    for (auto& x : v) x = static_cast<std::int64_t>(rng() % d);
    Frame f({"c"}, {TypedColumn::int64(v)});
    TransformSpec spec;
    spec.columns.resize(1);
    spec.columns[0].kind = Directive::RECODE;
    spec.columns[0].dummy = true;
    auto comp = transform_encode(f, spec, EncodePath::F_CM);
    auto csr = transform_encode(f, spec, EncodePath::F_M);
    std::size_t dd = dictionary_code(f.column(0)).dict.size();
    PathSizes model = output_size_model(spec.columns[0], n, dd);
    rows.push_back({{"d", dd},
                    {"compressed", encoded_size(comp.matrix)},
                    {"csr", encoded_size(csr.matrix)},
                    {"model_cm", static_cast<std::uint64_t>(model.f_cm)},
                    {"model_fm", static_cast<std::uint64_t>(model.f_m)}});
  }
  return rows;
}

json bench_paths(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::string> names;
  std::vector<TypedColumn> cols;
  for (int j = 0; j < 4; ++j) {
    std::vector<std::int64_t> v(n);
    for (auto& x : v) x = static_cast<std::int64_t>(rng() % (10u << (2 * j)));
    names.push_back("c" + std::to_string(j));
    cols.push_back(TypedColumn::int64(std::move(v)));
  }
  Frame f(names, cols);
  CompressedFrame cf = compress_frame(f);
  json rows = json::array();
  for (bool dummy : {false, true}) {
    TransformSpec spec;
    spec.columns.resize(4);
    for (auto& c : spec.columns) {
      c.kind = Directive::RECODE;
      c.dummy = dummy;
    }
    for (EncodePath p : {EncodePath::F_M, EncodePath::F_CM, EncodePath::CF_CM}) {
      double t0 = now_ms();
      auto r = p == EncodePath::CF_CM ? transform_encode(cf, spec, p) : transform_encode(f, spec, p);
      rows.push_back({{"directive", dummy ? "recode+dummy" : "recode"},
                      {"path", to_string(p)},
                      {"ms", now_ms() - t0},
                      {"bytes", encoded_size(r.matrix)}});
    }
  }
  return rows;
}

json bench_combine(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  json rows = json::array();
  for (std::size_t d : {std::size_t{4}, std::size_t{64}, std::size_t{1024}}) {
    auto make = [&](std::uint32_t col) {
      std::vector<std::uint32_t> ids(n);
      for (auto& x : ids) x = static_cast<std::uint32_t>(rng() % d);
      Matrix dict(d, 1);
      for (std::size_t k = 0; k < d; ++k) dict(k, 0) = static_cast<double>(k) + 0.5;
      return ColumnGroup::ddc(ColIndexes::range(col, col + 1), make_map(MapVector::pack(ids, map_width_for(d))),
                              Dictionary::dense(std::move(dict)));
    };
    ColumnGroup a = make(0), b = make(1);
    double t0 = now_ms();
    ColumnGroup c = combine_ddc(a, b);
    double kernel = now_ms() - t0;
    t0 = now_ms();
    CompressedMatrix both(n, 2, {a, b});
    ColumnGroup r = compress_block(decompress(both), ColIndexes::range(0, 2), Encoding::DDC);
    double naive = now_ms() - t0;
    rows.push_back({{"d", d}, {"d_R", c.as<DdcGroup>().dict.rows()}, {"combine_ms", kernel}, {"recompress_ms", naive}});
  }
  return rows;
}

json bench_encode(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  json rows = json::array();
  CompressionScheme scheme(ColIndexes::range(0, 2));
  const std::size_t blocks = 20, rows_per = std::max<std::size_t>(n / blocks, 1);
  for (std::size_t b = 0; b < blocks; ++b) {
    Matrix block(rows_per, 2);
    // Value sets drift: each block shifts the range by 16.
    for (std::size_t r = 0; r < rows_per; ++r) {
      block(r, 0) = static_cast<double>(16 * b + rng() % 64);
      block(r, 1) = static_cast<double>(rng() % 4);
    }
    double t0 = now_ms();
    ColumnGroup g = update_and_encode(scheme, block);
    rows.push_back({{"block", b},
                    {"ms", now_ms() - t0},
                    {"dict_rows", scheme.size()},
                    {"width", width_label(g.as<DdcGroup>().map->width())},
                    {"two_pass", scheme.two_pass_blocks()}});
  }
  return rows;
}

json bench_embed(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  json rows = json::array();
  for (std::size_t vocab : {std::size_t{100}, std::size_t{1000}}) {
    Matrix W(vocab, 32);
    for (auto& x : W.data()) x = static_cast<double>(rng() % 1000) / 1000.0;
    for (std::size_t rows_n : {n / 100, n / 10, n}) {
      rows_n = std::max<std::size_t>(rows_n, vocab);
      std::vector<std::string> words(rows_n);
      for (std::size_t r = 0; r < rows_n; ++r) words[r] = "w" + std::to_string(r < vocab ? r : rng() % vocab);
      CompressedFrame cf = compress_frame(Frame({"word"}, {TypedColumn::strings(words)}));
      TransformSpec spec;
      spec.columns.resize(1);
      spec.columns[0].kind = Directive::WORD_EMBED;
      spec.columns[0].embedding = std::make_shared<const Matrix>(W);
      double t0 = now_ms();
      auto r = transform_encode(cf, spec, EncodePath::CF_CM);
      rows.push_back({{"vocab", vocab}, {"rows", rows_n}, {"ms", now_ms() - t0}, {"bytes", encoded_size(r.matrix)}});
    }
  }
  return rows;
}

int cmd_bench(const CliConfig& cfg, const std::string& suite, std::size_t rows, std::ostream& out) {
  static const std::map<std::string, std::pair<std::function<json(std::size_t, std::uint64_t)>, std::vector<std::string>>>
      suites = {
          {"sizes", {bench_sizes, {"d", "compressed", "csr", "model_cm", "model_fm"}}},
          {"paths", {bench_paths, {"directive", "path", "ms", "bytes"}}},
          {"combine", {bench_combine, {"d", "d_R", "combine_ms", "recompress_ms"}}},
          {"encode", {bench_encode, {"block", "ms", "dict_rows", "width", "two_pass"}}},
          {"embed", {bench_embed, {"vocab", "rows", "ms", "bytes"}}},
      };
  auto it = suites.find(suite);
  if (it == suites.end()) {
    std::string known;
    for (const auto& [k, v] : suites) known += (known.empty() ? "" : ", ") + k;
    throw SpecError("unknown bench suite '" + suite + "' (known: " + known + ")");
  }
  json report;
  report["suite"] = suite;
  report["rows"] = rows;
  report["seed"] = cfg.seed;
  report["results"] = it->second.first(rows, cfg.seed);
  emit(out, cfg, report, "results", it->second.second);
  return kExitOk;
}

std::size_t env_threads() {
  const char* v = std::getenv("BWARE_THREADS");
  if (!v || !*v) return 0;
  char* end = nullptr;
  unsigned long n = std::strtoul(v, &end, 10);
  return end && *end == '\0' ? static_cast<std::size_t>(n) : 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"bware: compressed frames, feature transforms and ML pipelines"};
  app.require_subcommand(1);
  CliConfig cfg;
  app.add_option("--threads", cfg.threads, "Worker cap (default: BWARE_THREADS or all cores)");
  app.add_option("--seed", cfg.seed, "Seed for sampling and synthetic data");
  app.add_option("--report", cfg.format, "Report format")->check(CLI::IsMember({"text", "json"}));

  auto* compress = app.add_subcommand("compress", "Compress a CSV frame into a tiled directory, or re-tile one");
  double sample_fraction = 0.0;
  compress->add_option("input", cfg.input, "CSV file or tiled directory")->required();
  compress->add_option("output", cfg.output, "Output directory")->required();
  compress->add_option("--tile-rows", cfg.tile_rows, "Rows per tile")->check(CLI::Range(1u, 1u << 31));
  compress->add_option("--sample-fraction", sample_fraction, "Type detection sample (0 = default)")
      ->check(CLI::Range(0.0, 1.0));

  auto* inspect = app.add_subcommand("inspect", "Describe a tiled directory");
  bool detail = false;
  inspect->add_option("input", cfg.input, "Tiled directory")->required();
  inspect->add_flag("--groups", detail, "Read the object and list groups or columns");

  auto* transform = app.add_subcommand("transform", "Transform-encode a frame");
  std::string route = "CF-CM";
  transform->add_option("input", cfg.input, "CSV file or tiled frame directory")->required();
  transform->add_option("spec", cfg.spec, "Transform spec JSON file")->required();
  transform->add_option("output", cfg.output, "Output directory")->required();
  transform->add_option("--path", route, "Encode path")->check(CLI::IsMember({"F-M", "F-CM", "CF-CM"}));
  transform->add_option("--tile-rows", cfg.tile_rows, "Rows per tile")->check(CLI::Range(1u, 1u << 31));

  auto* morph_cmd = app.add_subcommand("morph", "Re-plan and re-encode a compressed matrix for a workload");
  WorkloadVector w{0, 1, 1, 0, 1};
  bool show_plan = false;
  morph_cmd->add_option("input", cfg.input, "Tiled matrix directory or numeric CSV")->required();
  morph_cmd->add_option("output", cfg.output, "Output directory")->required();
  morph_cmd->add_option("--lmm", w.lmm, "Left multiplications");
  morph_cmd->add_option("--rmm", w.rmm, "Right multiplications");
  morph_cmd->add_option("--scan", w.scan, "Scans");
  morph_cmd->add_option("--scalar", w.scalar, "Scalar operations");
  morph_cmd->add_option("--decompress", w.decompress, "Decompressions");
  morph_cmd->add_flag("--plan", show_plan, "Include the plan in the report");
  morph_cmd->add_option("--tile-rows", cfg.tile_rows, "Rows per tile")->check(CLI::Range(1u, 1u << 31));

  auto* run = app.add_subcommand("run", "Run a pipeline script");
  bool no_inject = false, compare = false, plan_flag = false;
  std::string metrics;
  double tolerance = 1e-8;
  run->add_option("pipeline", cfg.input, "Pipeline script")->required();
  run->add_flag("--no-inject", no_inject, "Do not inject compression or morphs");
  run->add_flag("--compare", compare, "Also run the other variant and compare coefficients");
  run->add_option("--metrics", metrics, "Write per-node metrics as JSON lines ('-' for stdout)");
  run->add_flag("--show-plan", plan_flag, "Print the planned graph");
  run->add_option("--tolerance", tolerance, "Relative tolerance for --compare");

  auto* bench = app.add_subcommand("bench", "Synthetic benchmark suites: sizes, paths, combine, encode, embed");
  std::string suite;
  std::size_t bench_rows = 100000;
  bench->add_option("suite", suite, "Suite name")->required();
  bench->add_option("--rows", bench_rows, "Rows")->check(CLI::Range(std::size_t{1}, std::size_t{1} << 31));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }

  if (cfg.threads == 0) cfg.threads = env_threads();
  if (cfg.threads > 0) set_num_threads(cfg.threads);
  cfg.subcommand = app.get_subcommands().front()->get_name();

  try {
    if (cfg.subcommand == "compress") return cmd_compress(cfg, sample_fraction, out);
    if (cfg.subcommand == "inspect") return cmd_inspect(cfg, detail, out);
    if (cfg.subcommand == "transform") return cmd_transform(cfg, route, out);
    if (cfg.subcommand == "morph") return cmd_morph(cfg, w, show_plan, out);
    if (cfg.subcommand == "run") return cmd_run(cfg, no_inject, compare, metrics, plan_flag, tolerance, out);
    if (cfg.subcommand == "bench") return cmd_bench(cfg, suite, bench_rows, out);
  } catch (const IoError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitInternal;
}

}  // namespace bware
