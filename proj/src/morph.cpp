#include "bware/morph.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <unordered_map>

#include "json.hpp"

namespace bware {

namespace {

bool zero_bits(double v) { return std::bit_cast<std::uint64_t>(v) == 0; }

bool same_bits(const double* a, const double* b, std::size_t n) { return std::memcmp(a, b, n * sizeof(double)) == 0; }

// First-occurrence dense ids of a key stream, with singleton and top counts.
struct Dense {
  std::vector<std::uint32_t> ids;
  std::size_t distinct = 0;
  std::size_t singletons = 0;
  std::size_t top = 0;
};

template <class Key>
Dense densify(const std::vector<Key>& keys) {
  Dense out;
  out.ids.resize(keys.size());
  std::unordered_map<Key, std::uint32_t> seen;
  seen.reserve(keys.size());
  std::vector<std::size_t> count;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    auto [it, fresh] = seen.try_emplace(keys[i], static_cast<std::uint32_t>(count.size()));
    if (fresh) count.push_back(0);
    ++count[it->second];
    out.ids[i] = it->second;
  }
  out.distinct = count.size();
  for (auto c : count) {
    if (c == 1) ++out.singletons;
    out.top = std::max(out.top, c);
  }
  return out;
}

// Sample-scaled distinct count: observed distinct plus singletons scaled by
// sqrt(n/s); exact when the sample covers every row.
double scale_distinct(const Dense& s, std::size_t nsample, std::size_t nrows) {
  if (nsample >= nrows || nsample == 0) return static_cast<double>(s.distinct);
  double extra = (std::sqrt(static_cast<double>(nrows) / nsample) - 1.0) * s.singletons;
  return std::min(static_cast<double>(nrows), std::floor(s.distinct + extra));
}

std::vector<std::uint32_t> sample_rows(std::size_t n, const MorphOptions& opts) {
  auto want = std::max<std::size_t>(opts.min_sample, static_cast<std::size_t>(std::ceil(opts.sample_fraction * n)));
  std::vector<std::uint32_t> all(n);
  std::iota(all.begin(), all.end(), 0u);
  if (want >= n) return all;
  std::vector<std::uint32_t> out;
  out.reserve(want);
  std::mt19937_64 rng(opts.seed);
  std::sample(all.begin(), all.end(), std::back_inserter(out), want, rng);
  return out;
}

// Where each input column lands in the merged column list.
struct ColMerge {
  ColIndexes cols;
  std::vector<std::uint32_t> pos_a;
  std::vector<std::uint32_t> pos_b;
};

ColMerge merge_cols(const ColIndexes& a, const ColIndexes& b) {
  ColMerge m{a.merged(b), {}, {}};
  auto find = [&](std::uint32_t c) {
    return static_cast<std::uint32_t>(std::lower_bound(m.cols.begin(), m.cols.end(), c) - m.cols.begin());
  };
  for (auto c : a) m.pos_a.push_back(find(c));
  for (auto c : b) m.pos_b.push_back(find(c));
  return m;
}

// Row r of out gets a's row ra and b's row rb at their merged positions.
template <class A, class B>
Matrix interleave(std::size_t rows, const ColMerge& m, A&& a_at, B&& b_at) {
  Matrix out(rows, m.cols.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double* o = out.row(r);
    for (std::size_t j = 0; j < m.pos_a.size(); ++j) o[m.pos_a[j]] = a_at(r, j);
    for (std::size_t j = 0; j < m.pos_b.size(); ++j) o[m.pos_b[j]] = b_at(r, j);
  }
  return out;
}

std::vector<double> interleave_tuple(const ColMerge& m, const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> out(m.cols.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[m.pos_a[j]] = a[j];
  for (std::size_t j = 0; j < b.size(); ++j) out[m.pos_b[j]] = b[j];
  return out;
}

std::vector<double> dict_row(const Dictionary& d, std::size_t r) {
  std::vector<double> out(d.cols());
  for (std::size_t c = 0; c < out.size(); ++c) out[c] = d.at(r, c);
  return out;
}

// Constant tuple of a CONST or EMPTY group.
std::vector<double> fixed_tuple(const ColumnGroup& g) {
  if (auto* k = g.try_as<ConstGroup>()) return k->tuple;
  return std::vector<double>(g.ncols(), 0.0);
}

bool is_fixed(Encoding e) { return e == Encoding::CONST || e == Encoding::EMPTY; }

std::vector<std::size_t> id_counts(const MapVector& map, std::size_t d) {
  std::vector<std::size_t> count(std::max<std::size_t>(d, 1), 0);
  map.for_each([&](std::size_t, std::uint32_t id) { ++count[id]; });
  return count;
}

Matrix decompress_cols(const CompressedMatrix& input, const ColumnStats& u) {
  const ColumnGroup& g = input.groups()[u.group];
  if (u.whole) return decompress_group(g);
  const Matrix& block = *g.as<UncompressedGroup>().block;
  Matrix out(block.rows(), 1);
  for (std::size_t r = 0; r < block.rows(); ++r) out(r, 0) = block(r, u.column);
  return out;
}

}  // namespace

// ---------------------------------------------------------------- encoding choice

EncodingChoice choose_encoding(double d, double top_share, bool all_zero, std::size_t nrows, const ColIndexes& cols,
                               const MorphOptions& opts) {
  const double n = static_cast<double>(nrows);
  const double c = static_cast<double>(cols.size());
  const double base = static_cast<double>(kGroupOverhead + cols.memory_bytes());
  if (all_zero) return {Encoding::EMPTY, base};
  d = std::max(1.0, std::ceil(d));
  if (d <= 1.0) return {Encoding::CONST, base + 8 * c};
  const double unc = base + 8 * n * c;
  double ddc = std::numeric_limits<double>::infinity();
  if (d <= static_cast<double>(capacity(MapWidth::W4B)))
    ddc = base + static_cast<double>(MapVector::payload_bytes(map_width_for(static_cast<std::uint64_t>(d)), nrows)) +
          8 * d * c;
  EncodingChoice best{Encoding::DDC, ddc};
  if (top_share > opts.dominance) {
    auto e = static_cast<std::size_t>(std::llround((1.0 - top_share) * n));
    double sdc = base + 8 * c + 4.0 * e +
                 static_cast<double>(MapVector::payload_bytes(map_width_for(static_cast<std::uint64_t>(d - 1)), e)) +
                 8 * (d - 1) * c;
    if (sdc < best.bytes) best = {Encoding::SDC, sdc};
  }
  if (best.bytes >= unc) best = {Encoding::UNCOMPRESSED, unc};
  return best;
}

// ---------------------------------------------------------------- classify

namespace {

ColumnStats column_unit(const Matrix& block, std::size_t col, std::uint32_t global_col, std::size_t group,
                        const std::vector<std::uint32_t>& rows) {
  ColumnStats u;
  u.cols = ColIndexes({global_col});
  u.group = group;
  u.whole = false;
  u.column = col;
  std::vector<std::uint64_t> keys(rows.size());
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  std::size_t nz = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double v = block(rows[i], col);
    keys[i] = std::bit_cast<std::uint64_t>(v);
    mn = std::min(mn, v);
    mx = std::max(mx, v);
    nz += v != 0.0;
  }
  Dense s = densify(keys);
  u.d = std::max(1.0, scale_distinct(s, rows.size(), block.rows()));
  u.exact = rows.size() == block.rows();
  u.top_share = rows.empty() ? 1.0 : static_cast<double>(s.top) / rows.size();
  u.nonzero_share = rows.empty() ? 0.0 : static_cast<double>(nz) / rows.size();
  u.min = rows.empty() ? 0.0 : mn;
  u.max = rows.empty() ? 0.0 : mx;
  u.all_zero = true;
  for (std::size_t r = 0; r < block.rows() && u.all_zero; ++r) u.all_zero = zero_bits(block(r, col));
  u.sample_ids = std::move(s.ids);
  return u;
}

void dict_summary(ColumnStats& u, const Dictionary& dict, const std::vector<std::size_t>& count, std::size_t n) {
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  double nz = 0.0;
  bool zero = true;
  for (std::size_t r = 0; r < dict.rows(); ++r) {
    if (count[r] == 0) continue;
    for (std::size_t c = 0; c < dict.cols(); ++c) {
      double v = dict.at(r, c);
      mn = std::min(mn, v);
      mx = std::max(mx, v);
      if (v != 0.0) nz += static_cast<double>(count[r]);
      zero = zero && zero_bits(v);
    }
  }
  if (mn <= mx) {
    u.min = std::min(u.min, mn);
    u.max = std::max(u.max, mx);
  }
  u.nonzero_share += nz / (static_cast<double>(n) * static_cast<double>(dict.cols()));
  u.all_zero = u.all_zero && zero;
}

ColumnStats group_unit(const ColumnGroup& g, std::size_t gi, const std::vector<std::uint32_t>& rows) {
  ColumnStats u;
  u.cols = g.cols();
  u.group = gi;
  u.exact = true;
  const std::size_t n = g.nrows();
  std::vector<std::uint64_t> keys(rows.size(), 0);
  std::visit(overloaded{
                 [&](const DdcGroup& d) {
                   auto count = id_counts(*d.map, d.dict.rows());
                   u.d = static_cast<double>(std::max<std::size_t>(d.dict.rows(), 1));
                   u.top_share = n ? static_cast<double>(*std::max_element(count.begin(), count.end())) / n : 1.0;
                   u.min = std::numeric_limits<double>::infinity();
                   u.max = -u.min;
                   u.all_zero = true;
                   dict_summary(u, d.dict, count, n);
                   for (std::size_t i = 0; i < rows.size(); ++i) keys[i] = d.map->get(rows[i]);
                 },
                 [&](const SdcGroup& s) {
                   auto count = id_counts(*s.map, s.dict.rows());
                   std::size_t exceptions = s.rows->size();
                   std::size_t used = 0, top = n - exceptions;
                   for (auto c : count) {
                     used += c > 0;
                     top = std::max(top, c);
                   }
                   u.d = static_cast<double>(used + (exceptions < n ? 1 : 0));
                   u.top_share = n ? static_cast<double>(top) / n : 1.0;
                   u.min = std::numeric_limits<double>::infinity();
                   u.max = -u.min;
                   u.all_zero = true;
                   double def_share = n ? static_cast<double>(n - exceptions) / n : 0.0;
                   for (double v : s.default_tuple) {
                     if (exceptions < n) {
                       u.min = std::min(u.min, v);
                       u.max = std::max(u.max, v);
                     }
                     if (v != 0.0) u.nonzero_share += def_share / s.default_tuple.size();
                     u.all_zero = u.all_zero && zero_bits(v);
                   }
                   dict_summary(u, s.dict, count, n);
                   // Sorted sample rows walk the sorted exception list.
                   const auto sentinel = static_cast<std::uint64_t>(s.dict.rows());
                   std::vector<std::size_t> order(rows.size());
                   std::iota(order.begin(), order.end(), 0);
                   std::sort(order.begin(), order.end(), [&](auto x, auto y) { return rows[x] < rows[y]; });
                   std::size_t e = 0;
                   for (auto i : order) {
                     while (e < exceptions && (*s.rows)[e] < rows[i]) ++e;
                     keys[i] = e < exceptions && (*s.rows)[e] == rows[i] ? s.map->get(e) : sentinel;
                   }
                 },
                 [&](const ConstGroup& k) {
                   u.d = 1;
                   u.top_share = 1;
                   u.min = *std::min_element(k.tuple.begin(), k.tuple.end());
                   u.max = *std::max_element(k.tuple.begin(), k.tuple.end());
                   u.all_zero = std::all_of(k.tuple.begin(), k.tuple.end(), zero_bits);
                   u.nonzero_share =
                       static_cast<double>(std::count_if(k.tuple.begin(), k.tuple.end(), [](double v) { return v != 0.0; })) /
                       k.tuple.size();
                 },
                 [&](const EmptyGroup&) {
                   u.d = 1;
                   u.top_share = 1;
                   u.all_zero = true;
                 },
                 [&](const UncompressedGroup&) {},
             },
             g.body());
  u.sample_ids = densify(keys).ids;
  return u;
}

Classification classify_impl(const CompressedMatrix& input, const MorphOptions& opts) {
  if (input.nrows() == 0 || input.ncols() == 0) throw ShapeError("cannot classify an empty matrix");
  Classification out;
  out.nrows = input.nrows();
  out.ncols = input.ncols();
  out.sample_rows = sample_rows(input.nrows(), opts);
  const auto& groups = input.groups();
  std::vector<std::vector<ColumnStats>> per(groups.size());
  parallel_for(groups.size(), [&](std::size_t gi) {
    const ColumnGroup& g = groups[gi];
    if (auto* u = g.try_as<UncompressedGroup>()) {
      for (std::size_t c = 0; c < g.ncols(); ++c) per[gi].push_back(column_unit(*u->block, c, g.cols()[c], gi, out.sample_rows));
    } else {
      per[gi].push_back(group_unit(g, gi, out.sample_rows));
    }
  });
  for (auto& v : per)
    for (auto& u : v) out.units.push_back(std::move(u));
  std::sort(out.units.begin(), out.units.end(), [](const ColumnStats& a, const ColumnStats& b) { return a.cols[0] < b.cols[0]; });
  return out;
}

}  // namespace

Classification classify(const CompressedMatrix& input, const MorphOptions& opts) { return classify_impl(input, opts); }

Classification classify(const Matrix& input, const MorphOptions& opts) {
  return classify_impl(wrap_uncompressed(input), opts);
}

// ---------------------------------------------------------------- group

namespace {

struct Cluster {
  std::vector<std::size_t> members;
  ColIndexes cols;
  std::vector<std::uint32_t> ids;
  std::size_t sample_distinct = 1;
  double d = 1.0;
  double top_share = 1.0;
  bool all_zero = false;
  EncodingChoice choice;
};

struct Zip {
  Dense dense;
  double d = 1.0;
};

Zip zip(const Cluster& a, const Cluster& b, std::size_t nrows, std::size_t limit_rows = 0) {
  std::size_t s = a.ids.size();
  if (limit_rows && limit_rows < s) s = limit_rows;
  std::vector<std::uint64_t> keys(s);
  for (std::size_t i = 0; i < s; ++i) keys[i] = a.ids[i] + static_cast<std::uint64_t>(b.ids[i]) * a.sample_distinct;
  Zip z{densify(keys), 1.0};
  double lo = std::max(a.d, b.d), hi = std::min(a.d * b.d, static_cast<double>(nrows));
  z.d = std::clamp(scale_distinct(z.dense, s, nrows), lo, std::max(lo, hi));
  if (limit_rows == 0 && s >= nrows) z.d = static_cast<double>(z.dense.distinct);
  return z;
}

// Workload cost of a group in bytes touched: byte size per scan-like op plus
// the row pass and dictionary product per matrix multiply.
double objective(const Cluster& c, std::size_t nrows, const WorkloadVector& w, const MorphOptions& opts) {
  double n = static_cast<double>(nrows), k = static_cast<double>(c.cols.size());
  double mm;
  switch (c.choice.encoding) {
    case Encoding::EMPTY:
    case Encoding::CONST: mm = 8 * k; break;
    case Encoding::UNCOMPRESSED: mm = 8 * n * k; break;
    default: mm = 8 * (n + c.d * k); break;
  }
  return c.choice.bytes * (1.0 + w.scan + w.decompress) + opts.alpha * (w.lmm + w.rmm) * mm;
}

double ratio(double dij, double di, double dj) { return 2.0 * dij / (di + dj); }

}  // namespace

CoCodeEstimate estimate_cocode(const Classification& c, std::size_t i, std::size_t j) {
  auto unit = [&](std::size_t k) {
    const ColumnStats& u = c.units.at(k);
    Cluster cl;
    cl.ids = u.sample_ids;
    cl.sample_distinct = u.sample_ids.empty() ? 1 : *std::max_element(u.sample_ids.begin(), u.sample_ids.end()) + 1;
    cl.d = u.d;
    return cl;
  };
  Cluster a = unit(i), b = unit(j);
  Zip z = zip(a, b, c.nrows);
  return {i, j, z.d, ratio(z.d, a.d, b.d)};
}

MorphPlan group(const Classification& stats, const WorkloadVector& workload, const MorphOptions& opts) {
  if (stats.units.empty()) throw ShapeError("no column statistics to plan from");
  const std::size_t n = stats.nrows;
  MorphPlan plan;
  plan.nrows = n;
  plan.ncols = stats.ncols;

  std::vector<Cluster> cl;
  std::vector<bool> alive;
  for (std::size_t i = 0; i < stats.units.size(); ++i) {
    const ColumnStats& u = stats.units[i];
    Cluster c;
    c.members = {i};
    c.cols = u.cols;
    c.ids = u.sample_ids;
    c.sample_distinct = c.ids.empty() ? 1 : *std::max_element(c.ids.begin(), c.ids.end()) + 1;
    c.d = u.d;
    c.top_share = u.top_share;
    c.all_zero = u.all_zero;
    c.choice = choose_encoding(c.d, c.top_share, c.all_zero, n, c.cols, opts);
    plan.est_bytes_before += c.choice.bytes;
    cl.push_back(std::move(c));
    alive.push_back(true);
  }

  // Candidate pairs ordered by ratio, then lowest columns.
  using Key = std::tuple<double, std::uint32_t, std::uint32_t, std::size_t, std::size_t>;
  std::set<Key> queue;
  auto push = [&](std::size_t a, std::size_t b) {
    if (cl[a].cols[0] > cl[b].cols[0]) std::swap(a, b);
    Zip z = zip(cl[a], cl[b], n);
    queue.emplace(ratio(z.d, cl[a].d, cl[b].d), cl[a].cols[0], cl[b].cols[0], a, b);
  };

  const std::size_t m = cl.size();
  const bool limited = opts.limit_pairs && m > opts.pair_limit_units;
  std::vector<std::set<std::size_t>> partners(m);
  if (limited) {
    std::vector<std::tuple<double, std::size_t, std::size_t>> pre;
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) {
        Zip z = zip(cl[a], cl[b], n, opts.prescore_rows);
        pre.emplace_back(ratio(static_cast<double>(z.dense.distinct), static_cast<double>(std::max<std::size_t>(cl[a].sample_distinct, 1)),
                               static_cast<double>(std::max<std::size_t>(cl[b].sample_distinct, 1))),
                         a, b);
      }
    std::size_t keep = std::min(pre.size(), opts.pair_factor * m);
    std::partial_sort(pre.begin(), pre.begin() + static_cast<std::ptrdiff_t>(keep), pre.end());
    for (std::size_t p = 0; p < keep; ++p) {
      auto [r, a, b] = pre[p];
      partners[a].insert(b);
      partners[b].insert(a);
      push(a, b);
    }
  } else {
    for (std::size_t a = 0; a < m; ++a)
      for (std::size_t b = a + 1; b < m; ++b) push(a, b);
  }

  auto make_merged = [&](const Cluster& a, const Cluster& b, Zip z) {
    Cluster c;
    c.members = a.members;
    c.members.insert(c.members.end(), b.members.begin(), b.members.end());
    c.cols = a.cols.merged(b.cols);
    c.ids = std::move(z.dense.ids);
    c.sample_distinct = std::max<std::size_t>(z.dense.distinct, 1);
    c.d = z.d;
    c.top_share = c.ids.empty() ? 1.0 : static_cast<double>(z.dense.top) / c.ids.size();
    c.all_zero = a.all_zero && b.all_zero;
    c.choice = choose_encoding(c.d, c.top_share, c.all_zero, n, c.cols, opts);
    return c;
  };
  auto additive = [](double dij, double da, double db) { return dij <= da + db - 1.0; };

  auto accept = [&](std::vector<std::size_t> parts, Cluster merged) {
    for (auto x : parts) alive[x] = false;
    std::size_t id = cl.size();
    cl.push_back(std::move(merged));
    alive.push_back(true);
    plan.merges += parts.size() - 1;
    if (limited) {
      std::set<std::size_t> p;
      for (auto y : parts)
        for (auto x : partners[y])
          if (alive[x]) p.insert(x);
      partners.push_back(p);
      for (auto x : p) {
        partners[x].insert(id);
        push(x, id);
      }
    } else {
      for (std::size_t x = 0; x < id; ++x)
        if (alive[x]) push(x, id);
    }
  };

  while (!queue.empty()) {
    auto [r, ca, cb, a, b] = *queue.begin();
    queue.erase(queue.begin());
    if (!alive[a] || !alive[b]) continue;
    Zip z = zip(cl[a], cl[b], n);
    bool corr = additive(z.d, cl[a].d, cl[b].d);
    Cluster cur = make_merged(cl[a], cl[b], std::move(z));
    double parts_bytes = cl[a].choice.bytes + cl[b].choice.bytes;
    double parts_j = objective(cl[a], n, workload, opts) + objective(cl[b], n, workload, opts);
    std::vector<std::size_t> parts{a, b};
    auto pays = [&] { return cur.choice.bytes <= parts_bytes && objective(cur, n, workload, opts) < parts_j; };
    if (pays()) {
      accept(parts, std::move(cur));
      continue;
    }
    if (!corr) continue;
    // Lookahead over correlated clusters: the whole set may pay off even
    // though no single pair does (one-hot columns of one source).
    for (std::size_t step = 0; step < opts.lookahead; ++step) {
      std::size_t best = cl.size();
      double best_d = 0.0;
      std::optional<Zip> best_zip;
      for (std::size_t x = 0; x < cl.size(); ++x) {
        if (!alive[x] || std::find(parts.begin(), parts.end(), x) != parts.end()) continue;
        if (limited && std::none_of(parts.begin(), parts.end(), [&](auto y) { return partners[y].count(x) > 0; }))
          continue;
        Zip zx = zip(cur, cl[x], n);
        if (!additive(zx.d, cur.d, cl[x].d)) continue;
        if (best == cl.size() || zx.d < best_d || (zx.d == best_d && cl[x].cols[0] < cl[best].cols[0])) {
          best = x;
          best_d = zx.d;
          best_zip = std::move(zx);
        }
      }
      if (best == cl.size()) break;
      cur = make_merged(cur, cl[best], std::move(*best_zip));
      parts_bytes += cl[best].choice.bytes;
      parts_j += objective(cl[best], n, workload, opts);
      parts.push_back(best);
      if (pays()) {
        accept(parts, std::move(cur));
        break;
      }
    }
  }

  for (std::size_t i = 0; i < cl.size(); ++i) {
    if (!alive[i]) continue;
    PlanGroup g;
    g.cols = cl[i].cols;
    g.target = cl[i].choice.encoding;
    g.members = cl[i].members;
    std::sort(g.members.begin(), g.members.end());
    g.est_d = cl[i].d;
    g.est_bytes = cl[i].choice.bytes;
    plan.groups.push_back(std::move(g));
  }
  std::sort(plan.groups.begin(), plan.groups.end(), [](const PlanGroup& x, const PlanGroup& y) { return x.cols[0] < y.cols[0]; });
  return plan;
}

std::string plan_to_json(const MorphPlan& plan) {
  nlohmann::json j;
  j["nrows"] = plan.nrows;
  j["ncols"] = plan.ncols;
  j["merges"] = plan.merges;
  j["est_bytes_before"] = plan.est_bytes_before;
  double after = 0.0;
  j["groups"] = nlohmann::json::array();
  for (const auto& g : plan.groups) {
    after += g.est_bytes;
    j["groups"].push_back({{"cols", g.cols.values()},
                           {"encoding", to_string(g.target)},
                           {"members", g.members},
                           {"est_d", g.est_d},
                           {"est_bytes", g.est_bytes}});
  }
  j["est_bytes_after"] = after;
  return j.dump();
}

// ---------------------------------------------------------------- combine

ColumnGroup combine_ddc(const ColumnGroup& a, const ColumnGroup& b) {
  if (a.nrows() != b.nrows()) throw ShapeError("combined groups differ in row count");
  const auto* da = a.try_as<DdcGroup>();
  const auto* db = b.try_as<DdcGroup>();
  if (!da || !db) throw PlanError("combine_ddc needs two DDC groups");
  const std::size_t n = a.nrows();
  const std::uint64_t d1 = std::max<std::size_t>(da->dict.rows(), 1), d2 = std::max<std::size_t>(db->dict.rows(), 1);
  ColMerge cm = merge_cols(a.cols(), b.cols());

  std::vector<std::uint32_t> ids(n);
  std::vector<std::uint64_t> keys;
  std::vector<std::uint32_t> mb = db->map->decode();
  constexpr auto kFree = std::numeric_limits<std::uint32_t>::max();
  if (d1 * d2 <= std::max<std::uint64_t>(4 * n, 1u << 16)) {
    std::vector<std::uint32_t> table(d1 * d2, kFree);
    da->map->for_each([&](std::size_t r, std::uint32_t i1) {
      std::uint64_t k = i1 + mb[r] * d1;
      if (table[k] == kFree) {
        table[k] = static_cast<std::uint32_t>(keys.size());
        keys.push_back(k);
      }
      ids[r] = table[k];
    });
  } else {
    std::unordered_map<std::uint64_t, std::uint32_t> table;
    da->map->for_each([&](std::size_t r, std::uint32_t i1) {
      std::uint64_t k = i1 + mb[r] * d1;
      auto [it, fresh] = table.try_emplace(k, static_cast<std::uint32_t>(keys.size()));
      if (fresh) keys.push_back(k);
      ids[r] = it->second;
    });
  }
  Matrix dict = interleave(
      keys.size(), cm, [&](std::size_t v, std::size_t c) { return da->dict.at(keys[v] % d1, c); },
      [&](std::size_t v, std::size_t c) { return db->dict.at(keys[v] / d1, c); });
  auto width = map_width_for(std::max<std::size_t>(keys.size(), 1));
  return ColumnGroup::ddc(cm.cols, make_map(MapVector::pack(ids, width)), Dictionary::dense(std::move(dict)));
}

namespace {

// g widened by a fixed tuple over other columns.
ColumnGroup widen(const ColumnGroup& g, const ColIndexes& other, const std::vector<double>& tuple) {
  ColMerge cm = merge_cols(g.cols(), other);
  auto fixed = [&](std::size_t, std::size_t c) { return tuple[c]; };
  auto widen_dict = [&](const Dictionary& d) {
    return Dictionary::dense(interleave(d.rows(), cm, [&](std::size_t r, std::size_t c) { return d.at(r, c); }, fixed));
  };
  return std::visit(
      overloaded{
          [&](const DdcGroup& d) { return ColumnGroup::ddc(cm.cols, d.map, widen_dict(d.dict), d.shared_map); },
          [&](const SdcGroup& s) {
            return ColumnGroup::sdc(g.nrows(), cm.cols, interleave_tuple(cm, s.default_tuple, tuple), s.rows, s.map,
                                    widen_dict(s.dict));
          },
          [&](const ConstGroup& k) { return ColumnGroup::constant(g.nrows(), cm.cols, interleave_tuple(cm, k.tuple, tuple)); },
          [&](const EmptyGroup&) {
            return ColumnGroup::constant(g.nrows(), cm.cols, interleave_tuple(cm, std::vector<double>(g.ncols(), 0.0), tuple));
          },
          [&](const UncompressedGroup& u) {
            const Matrix& blk = *u.block;
            return ColumnGroup::uncompressed(cm.cols, interleave(blk.rows(), cm, [&](std::size_t r, std::size_t c) { return blk(r, c); }, fixed));
          },
      },
      g.body());
}

ColumnGroup fallback(const ColumnGroup& a, const ColumnGroup& b, const MorphOptions& opts) {
  ColMerge cm = merge_cols(a.cols(), b.cols());
  Matrix ma = decompress_group(a), mb = decompress_group(b);
  Matrix block = interleave(
      a.nrows(), cm, [&](std::size_t r, std::size_t c) { return ma(r, c); }, [&](std::size_t r, std::size_t c) { return mb(r, c); });
  return compress_block(block, cm.cols, std::nullopt, opts);
}

ColumnGroup sdc_to_ddc(const ColumnGroup& g) {
  const auto& s = g.as<SdcGroup>();
  const std::size_t d = s.dict.rows();
  Matrix dict(d + 1, g.ncols());
  for (std::size_t r = 0; r < d; ++r)
    for (std::size_t c = 0; c < g.ncols(); ++c) dict(r, c) = s.dict.at(r, c);
  for (std::size_t c = 0; c < g.ncols(); ++c) dict(d, c) = s.default_tuple[c];
  std::vector<std::uint32_t> ids(g.nrows(), static_cast<std::uint32_t>(d));
  s.map->for_each([&](std::size_t e, std::uint32_t id) { ids[(*s.rows)[e]] = id; });
  return ColumnGroup::ddc(g.cols(), make_map(MapVector::pack(ids, map_width_for(d + 1))), Dictionary::dense(std::move(dict)));
}

}  // namespace

ColumnGroup combine_any(const ColumnGroup& a, const ColumnGroup& b, MorphCounters* counters, const MorphOptions& opts) {
  if (a.nrows() != b.nrows()) throw ShapeError("combined groups differ in row count");
  MorphCounters local;
  auto done = [&](ColumnGroup g) {
    if (counters) *counters += local;
    return g;
  };
  const Encoding ea = a.encoding(), eb = b.encoding();

  if (ea == Encoding::EMPTY && eb == Encoding::EMPTY) {
    ++local.combines;
    return done(ColumnGroup::empty(a.nrows(), a.cols().merged(b.cols())));
  }
  if (is_fixed(eb)) {
    ++local.combines;
    return done(widen(a, b.cols(), fixed_tuple(b)));
  }
  if (is_fixed(ea)) {
    ++local.combines;
    return done(widen(b, a.cols(), fixed_tuple(a)));
  }
  if (ea == Encoding::DDC && eb == Encoding::DDC) {
    ++local.combines;
    return done(combine_ddc(a, b));
  }
  if (ea == Encoding::UNCOMPRESSED && eb == Encoding::UNCOMPRESSED) {
    ++local.combines;
    ColMerge cm = merge_cols(a.cols(), b.cols());
    const Matrix& ma = *a.as<UncompressedGroup>().block;
    const Matrix& mb = *b.as<UncompressedGroup>().block;
    return done(ColumnGroup::uncompressed(
        cm.cols, interleave(a.nrows(), cm, [&](std::size_t r, std::size_t c) { return ma(r, c); },
                            [&](std::size_t r, std::size_t c) { return mb(r, c); })));
  }
  if (ea == Encoding::SDC && eb == Encoding::SDC) {
    const auto& sa = a.as<SdcGroup>();
    const auto& sb = b.as<SdcGroup>();
    if (sa.rows == sb.rows || *sa.rows == *sb.rows) {
      // Same exception rows: zip the exception maps.
      ++local.combines;
      ColumnGroup za = ColumnGroup::ddc(a.cols(), sa.map, sa.dict);
      ColumnGroup zb = ColumnGroup::ddc(b.cols(), sb.map, sb.dict);
      ColumnGroup z = combine_ddc(za, zb);
      ColMerge cm = merge_cols(a.cols(), b.cols());
      const auto& zd = z.as<DdcGroup>();
      return done(ColumnGroup::sdc(a.nrows(), cm.cols, interleave_tuple(cm, sa.default_tuple, sb.default_tuple), sa.rows,
                                   zd.map, zd.dict));
    }
  }
  if ((ea == Encoding::SDC || ea == Encoding::DDC) && (eb == Encoding::SDC || eb == Encoding::DDC)) {
    auto convertible = [&](const ColumnGroup& g) {
      if (g.encoding() == Encoding::DDC) return true;
      return static_cast<double>(g.as<SdcGroup>().rows->size()) >= opts.sdc_convert_share * static_cast<double>(g.nrows());
    };
    if (convertible(a) && convertible(b)) {
      ColumnGroup ca = a, cb = b;
      if (ea == Encoding::SDC) {
        ca = sdc_to_ddc(a);
        ++local.conversions;
      }
      if (eb == Encoding::SDC) {
        cb = sdc_to_ddc(b);
        ++local.conversions;
      }
      ++local.combines;
      return done(combine_ddc(ca, cb));
    }
  }
  ++local.fallbacks;
  return done(fallback(a, b, opts));
}

// ---------------------------------------------------------------- encodings

namespace {

// Distinct tuples of a block, first-occurrence order.
struct BlockCode {
  std::vector<std::uint32_t> ids;
  std::vector<std::size_t> first_row;
  std::vector<std::size_t> count;
};

BlockCode code_rows(const Matrix& block) {
  BlockCode out;
  out.ids.resize(block.rows());
  const std::size_t c = block.cols();
  auto add = [&](std::size_t r, auto& table, auto key) {
    auto [it, fresh] = table.try_emplace(key, static_cast<std::uint32_t>(out.count.size()));
    if (fresh) {
      out.first_row.push_back(r);
      out.count.push_back(0);
    }
    ++out.count[it->second];
    out.ids[r] = it->second;
  };
  if (c == 1) {
    std::unordered_map<std::uint64_t, std::uint32_t> table;
    for (std::size_t r = 0; r < block.rows(); ++r) add(r, table, std::bit_cast<std::uint64_t>(block(r, 0)));
  } else {
    std::unordered_map<std::string, std::uint32_t> table;
    for (std::size_t r = 0; r < block.rows(); ++r)
      add(r, table, std::string(reinterpret_cast<const char*>(block.row(r)), c * sizeof(double)));
  }
  return out;
}

std::size_t argmax(const std::vector<std::size_t>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

bool admissible(Encoding target, std::size_t d, bool all_zero) {
  switch (target) {
    case Encoding::CONST: return d <= 1;
    case Encoding::EMPTY: return all_zero;
    case Encoding::DDC: return d <= capacity(MapWidth::W4B);
    default: return true;
  }
}

}  // namespace

ColumnGroup compress_block(const Matrix& block, const ColIndexes& cols, std::optional<Encoding> target,
                           const MorphOptions& opts) {
  if (block.cols() != cols.size()) throw ShapeError("block width does not match column set");
  const std::size_t n = block.rows(), c = block.cols();
  BlockCode code = code_rows(block);
  const std::size_t d = code.count.size();
  bool all_zero = n == 0 || (d == 1 && std::all_of(block.row(0), block.row(0) + c, zero_bits));
  std::size_t top = d ? argmax(code.count) : 0;
  Encoding enc;
  if (target && admissible(*target, d, all_zero)) {
    enc = *target;
  } else {
    double share = n ? static_cast<double>(d ? code.count[top] : 0) / n : 1.0;
    enc = choose_encoding(static_cast<double>(d), share, all_zero, n, cols, opts).encoding;
  }
  auto tuple = [&](std::size_t id) { return std::vector<double>(block.row(code.first_row[id]), block.row(code.first_row[id]) + c); };
  switch (enc) {
    case Encoding::EMPTY: return ColumnGroup::empty(n, cols);
    case Encoding::CONST: return ColumnGroup::constant(n, cols, d ? tuple(0) : std::vector<double>(c, 0.0));
    case Encoding::UNCOMPRESSED: return ColumnGroup::uncompressed(cols, block);
    case Encoding::DDC: {
      Matrix dict(d, c);
      for (std::size_t v = 0; v < d; ++v) std::copy_n(block.row(code.first_row[v]), c, dict.row(v));
      return ColumnGroup::ddc(cols, make_map(MapVector::pack(code.ids, map_width_for(std::max<std::size_t>(d, 1)))),
                              Dictionary::dense(std::move(dict)));
    }
    case Encoding::SDC: {
      // Dictionary holds every tuple except the default; ids above it shift down.
      Matrix dict(d ? d - 1 : 0, c);
      for (std::size_t v = 0, o = 0; v < d; ++v)
        if (v != top) std::copy_n(block.row(code.first_row[v]), c, dict.row(o++));
      std::vector<std::uint32_t> rows, ids;
      for (std::size_t r = 0; r < n; ++r) {
        std::uint32_t id = code.ids[r];
        if (id == top) continue;
        rows.push_back(static_cast<std::uint32_t>(r));
        ids.push_back(id > top ? id - 1 : id);
      }
      return ColumnGroup::sdc(n, cols, d ? tuple(top) : std::vector<double>(c, 0.0), std::move(rows),
                              make_map(MapVector::pack(ids, map_width_for(std::max<std::size_t>(dict.rows(), 1)))),
                              Dictionary::dense(std::move(dict)));
    }
  }
  throw Error("unreachable encoding");
}

namespace {

// Distinct decompressed tuples of g, first-occurrence order, at most limit.
std::vector<std::vector<double>> used_tuples(const ColumnGroup& g, std::size_t limit) {
  std::vector<std::vector<double>> out;
  auto add = [&](std::vector<double> t) {
    for (const auto& u : out)
      if (same_bits(u.data(), t.data(), t.size())) return;
    out.push_back(std::move(t));
  };
  std::visit(overloaded{
                 [&](const DdcGroup& d) {
                   std::vector<bool> used(d.dict.rows(), false);
                   d.map->for_each([&](std::size_t, std::uint32_t id) { used[id] = true; });
                   for (std::size_t r = 0; r < used.size() && out.size() < limit; ++r)
                     if (used[r]) add(dict_row(d.dict, r));
                 },
                 [&](const SdcGroup& s) {
                   if (s.rows->size() < g.nrows()) add(s.default_tuple);
                   std::vector<bool> used(s.dict.rows(), false);
                   s.map->for_each([&](std::size_t, std::uint32_t id) { used[id] = true; });
                   for (std::size_t r = 0; r < used.size() && out.size() < limit; ++r)
                     if (used[r]) add(dict_row(s.dict, r));
                 },
                 [&](const ConstGroup& k) { add(k.tuple); },
                 [&](const EmptyGroup&) { add(std::vector<double>(g.ncols(), 0.0)); },
                 [&](const UncompressedGroup& u) {
                   for (std::size_t r = 0; r < u.block->rows() && out.size() < limit; ++r)
                     add(std::vector<double>(u.block->row(r), u.block->row(r) + g.ncols()));
                 },
             },
             g.body());
  return out;
}

}  // namespace

ColumnGroup morph_encoding(const ColumnGroup& g, Encoding target) {
  const Encoding from = g.encoding();
  const std::size_t n = g.nrows();
  switch (target) {
    case Encoding::CONST:
    case Encoding::EMPTY: {
      if (from == target) return g;
      auto t = used_tuples(g, 2);
      if (t.size() > 1) throw PlanError(std::string("group with several tuples cannot become ") + to_string(target));
      std::vector<double> tuple = t.empty() ? std::vector<double>(g.ncols(), 0.0) : t[0];
      if (target == Encoding::CONST) return ColumnGroup::constant(n, g.cols(), std::move(tuple));
      if (!std::all_of(tuple.begin(), tuple.end(), zero_bits)) throw PlanError("nonzero group cannot become EMPTY");
      return ColumnGroup::empty(n, g.cols());
    }
    case Encoding::UNCOMPRESSED:
      if (from == target) return g;
      return ColumnGroup::uncompressed(g.cols(), decompress_group(g));
    case Encoding::DDC:
      switch (from) {
        case Encoding::DDC: {
          const auto& d = g.as<DdcGroup>();
          auto w = map_width_for(static_cast<std::uint64_t>(d.map->size() ? d.map->max_id() : 0) + 1);
          if (w == d.map->width()) return g;
          return ColumnGroup::ddc(g.cols(), make_map(d.map->repack(w)), d.dict);
        }
        case Encoding::SDC: return sdc_to_ddc(g);
        case Encoding::CONST:
        case Encoding::EMPTY: {
          Matrix dict(1, g.ncols());
          auto t = fixed_tuple(g);
          std::copy(t.begin(), t.end(), dict.row(0));
          return ColumnGroup::ddc(g.cols(), make_map(MapVector(MapWidth::W0, n)), Dictionary::dense(std::move(dict)));
        }
        case Encoding::UNCOMPRESSED: return compress_block(*g.as<UncompressedGroup>().block, g.cols(), Encoding::DDC);
      }
      break;
    case Encoding::SDC:
      switch (from) {
        case Encoding::SDC: return g;
        case Encoding::DDC: {
          // Exceptions keep indexing the same dictionary; the default row is unused.
          const auto& d = g.as<DdcGroup>();
          auto count = id_counts(*d.map, d.dict.rows());
          std::uint32_t def = static_cast<std::uint32_t>(argmax(count));
          std::vector<std::uint32_t> rows, ids;
          d.map->for_each([&](std::size_t r, std::uint32_t id) {
            if (id == def) return;
            rows.push_back(static_cast<std::uint32_t>(r));
            ids.push_back(id);
          });
          return ColumnGroup::sdc(n, g.cols(), dict_row(d.dict, def), std::move(rows),
                                  make_map(MapVector::pack(ids, map_width_for(std::max<std::size_t>(d.dict.rows(), 1)))),
                                  d.dict);
        }
        case Encoding::CONST:
        case Encoding::EMPTY:
          return ColumnGroup::sdc(n, g.cols(), fixed_tuple(g), std::vector<std::uint32_t>{},
                                  make_map(MapVector(MapWidth::W0, 0)), Dictionary::dense(Matrix(0, g.ncols())));
        case Encoding::UNCOMPRESSED: return compress_block(*g.as<UncompressedGroup>().block, g.cols(), Encoding::SDC);
      }
      break;
  }
  throw PlanError("unsupported encoding conversion");
}

// ---------------------------------------------------------------- execute

CompressedMatrix execute_plan(const CompressedMatrix& input, const Classification& stats, const MorphPlan& plan,
                              const MorphOptions& opts, MorphCounters* counters) {
  std::vector<ColumnGroup> out(plan.groups.size());
  std::vector<MorphCounters> local(plan.groups.size());
  parallel_for(plan.groups.size(), [&](std::size_t i) {
    const PlanGroup& pg = plan.groups[i];
    bool whole = std::all_of(pg.members.begin(), pg.members.end(), [&](auto m) { return stats.units[m].whole; });
    if (whole) {
      std::vector<std::size_t> order = pg.members;
      std::sort(order.begin(), order.end(),
                [&](auto x, auto y) { return stats.units[x].cols[0] < stats.units[y].cols[0]; });
      ColumnGroup g = input.groups()[stats.units[order[0]].group];
      for (std::size_t k = 1; k < order.size(); ++k)
        g = combine_any(g, input.groups()[stats.units[order[k]].group], &local[i], opts);
      if (g.encoding() == pg.target && pg.target != Encoding::DDC) {
        out[i] = std::move(g);
        return;
      }
      try {
        ColumnGroup m = morph_encoding(g, pg.target);
        if (m.encoding() != g.encoding()) ++local[i].conversions;
        out[i] = std::move(m);
      } catch (const PlanError&) {
        // Estimated target does not hold for the exact data.
        ++local[i].fallbacks;
        out[i] = compress_block(decompress_group(g), g.cols(), std::nullopt, opts);
      }
      return;
    }
    // Compression path: gather the plan group's columns only.
    Matrix block(plan.nrows, pg.cols.size());
    bool any_group = false;
    for (auto m : pg.members) {
      const ColumnStats& u = stats.units[m];
      any_group = any_group || u.whole;
      Matrix part = decompress_cols(input, u);
      for (std::size_t j = 0; j < u.cols.size(); ++j) {
        auto pos = static_cast<std::size_t>(std::lower_bound(pg.cols.begin(), pg.cols.end(), u.cols[j]) - pg.cols.begin());
        for (std::size_t r = 0; r < plan.nrows; ++r) block(r, pos) = part(r, j);
      }
    }
    if (any_group) ++local[i].fallbacks;
    out[i] = compress_block(block, pg.cols, pg.target, opts);
  });
  if (counters)
    for (const auto& c : local) *counters += c;
  return CompressedMatrix(input.nrows(), input.ncols(), std::move(out));
}

CompressedMatrix morph(const CompressedMatrix& input, const WorkloadVector& workload, const MorphOptions& opts,
                       MorphCounters* counters, MorphPlan* plan_out) {
  if (input.nrows() == 0 || input.ncols() == 0) return input;
  Classification stats = classify(input, opts);
  MorphPlan plan = group(stats, workload, opts);
  CompressedMatrix out = execute_plan(input, stats, plan, opts, counters);
  if (plan_out) *plan_out = std::move(plan);
  return out;
}

CompressedMatrix morph(const Matrix& input, const WorkloadVector& workload, const MorphOptions& opts,
                       MorphCounters* counters, MorphPlan* plan_out) {
  return morph(wrap_uncompressed(input), workload, opts, counters, plan_out);
}

double estimate_morph_cost(const CompressedMatrix& input, const MorphPlan& plan) {
  // One pass over every map for statistics, then a read of merged inputs and
  // a write of their output.
  double cost = 0.0;
  for (const auto& g : input.groups()) {
    if (auto* d = g.try_as<DdcGroup>()) cost += static_cast<double>(d->map->payload_bytes());
    else if (auto* s = g.try_as<SdcGroup>()) cost += static_cast<double>(s->map->payload_bytes() + 4 * s->rows->size());
    else if (auto* u = g.try_as<UncompressedGroup>()) cost += static_cast<double>(u->block->memory_bytes());
  }
  for (const auto& pg : plan.groups)
    if (pg.members.size() > 1) cost += 2.0 * pg.est_bytes;
  return cost;
}

}  // namespace bware
