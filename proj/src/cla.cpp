#include "bware/cla.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <string>

namespace bware {

Matrix decompress(const CompressedMatrix& cm) {
  Matrix out(cm.nrows(), cm.ncols());
  const auto& groups = cm.groups();
  parallel_for(groups.size(), [&](std::size_t i) { decompress_into(groups[i], out, 0, cm.nrows()); });
  return out;
}

CompressedMatrix wrap_uncompressed(const Matrix& m) {
  std::vector<ColumnGroup> groups;
  if (m.cols() > 0)
    groups.push_back(ColumnGroup::uncompressed(ColIndexes::range(0, static_cast<std::uint32_t>(m.cols())), m));
  return CompressedMatrix(m.rows(), m.cols(), std::move(groups));
}

namespace {

bool is_zero_bits(double v) { return std::bit_cast<std::uint64_t>(v) == 0; }

Matrix map_cells(const Matrix& m, const CellOp& op) {
  Matrix out(m.rows(), m.cols());
  auto in = m.values();
  auto& o = out.data();
  for (std::size_t i = 0; i < in.size(); ++i) o[i] = op(in[i]);
  return out;
}

std::vector<double> map_tuple(const std::vector<double>& t, const CellOp& op) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = op(t[i]);
  return out;
}

Dictionary map_dict(const Dictionary& d, const CellOp& op) {
  if (d.is_identity()) {
    if (is_zero_bits(op(0.0)) && op(1.0) == 1.0) return d;
    return Dictionary::dense(map_cells(d.materialize(), op));
  }
  return Dictionary::dense(map_cells(*d.matrix(), op));
}

}  // namespace

CompressedMatrix scalar_op(const CompressedMatrix& cm, const CellOp& op) {
  std::vector<ColumnGroup> out(cm.groups().size());
  parallel_for(out.size(), [&](std::size_t i) {
    const ColumnGroup& g = cm.groups()[i];
    out[i] = std::visit(
        overloaded{
            [&](const DdcGroup& d) { return ColumnGroup::ddc(g.cols(), d.map, map_dict(d.dict, op), true); },
            [&](const SdcGroup& s) {
              return ColumnGroup::sdc(g.nrows(), g.cols(), map_tuple(s.default_tuple, op), s.rows, s.map,
                                      map_dict(s.dict, op));
            },
            [&](const ConstGroup& k) { return ColumnGroup::constant(g.nrows(), g.cols(), map_tuple(k.tuple, op)); },
            [&](const EmptyGroup&) {
              double z = op(0.0);
              if (is_zero_bits(z)) return g;
              return ColumnGroup::constant(g.nrows(), g.cols(), std::vector<double>(g.ncols(), z));
            },
            [&](const UncompressedGroup& u) { return ColumnGroup::uncompressed(g.cols(), map_cells(*u.block, op)); },
        },
        g.body());
  });
  return CompressedMatrix(cm.nrows(), cm.ncols(), std::move(out));
}

namespace {

// Concatenates dictionary columns; identities are materialized.
Dictionary concat_dicts(const Dictionary& a, const Dictionary& b) {
  if (a.rows() != b.rows()) throw ShapeError("co-coded dictionaries differ in row count");
  Matrix ma = a.materialize();
  Matrix mb = b.materialize();
  return Dictionary::dense(cbind(ma, mb));
}

}  // namespace

CompressedMatrix cbind(const std::vector<CompressedMatrix>& parts) {
  if (parts.empty()) return {};
  const std::size_t n = parts.front().nrows();
  std::vector<ColumnGroup> out;
  std::map<const MapVector*, std::size_t> by_map;
  std::uint32_t offset = 0;
  for (const auto& p : parts) {
    if (p.nrows() != n)
      throw ShapeError("cbind: " + std::to_string(p.nrows()) + " rows vs " + std::to_string(n));
    for (const auto& g : p.groups()) {
      ColIndexes cols = g.cols().shifted(offset);
      const MapVector* key = nullptr;
      if (auto d = g.try_as<DdcGroup>()) key = d->map.get();
      if (auto s = g.try_as<SdcGroup>()) key = s->map.get();
      auto hit = key ? by_map.find(key) : by_map.end();
      if (hit != by_map.end()) {
        ColumnGroup& prev = out[hit->second];
        ColIndexes merged = prev.cols().merged(cols);
        if (auto pd = prev.try_as<DdcGroup>(); pd && g.try_as<DdcGroup>()) {
          prev = ColumnGroup::ddc(std::move(merged), pd->map, concat_dicts(pd->dict, g.as<DdcGroup>().dict), true);
          continue;
        }
        auto ps = prev.try_as<SdcGroup>();
        auto gs = g.try_as<SdcGroup>();
        if (ps && gs && ps->rows == gs->rows) {
          std::vector<double> def = ps->default_tuple;
          def.insert(def.end(), gs->default_tuple.begin(), gs->default_tuple.end());
          prev = ColumnGroup::sdc(n, std::move(merged), std::move(def), ps->rows, ps->map,
                                  concat_dicts(ps->dict, gs->dict));
          continue;
        }
      }
      if (key && hit == by_map.end()) by_map.emplace(key, out.size());
      out.push_back(g.with_cols(std::move(cols)));
    }
    offset += static_cast<std::uint32_t>(p.ncols());
  }
  return CompressedMatrix(n, offset, std::move(out));
}

CompressedMatrix cbind(const CompressedMatrix& a, const CompressedMatrix& b) { return cbind(std::vector{a, b}); }

Matrix left_mm(const Matrix& A, const CompressedMatrix& cm, LmmStats* stats) {
  if (A.cols() != cm.nrows())
    throw ShapeError("left_mm: " + std::to_string(A.rows()) + "x" + std::to_string(A.cols()) + " by " +
                     std::to_string(cm.nrows()) + "x" + std::to_string(cm.ncols()));
  const std::size_t k = A.rows();
  const std::size_t n = cm.nrows();
  Matrix out(k, cm.ncols());
  const auto& groups = cm.groups();
  std::vector<std::size_t> cells(groups.size(), 0);

  // out(i, cols) = P (k x d) * dict (d x c)
  auto emit = [&](const std::vector<double>& P, std::size_t d, const Dictionary& dict, const ColIndexes& cols) {
    for (std::size_t i = 0; i < k; ++i) {
      const double* p = P.data() + i * d;
      double* o = out.row(i);
      if (dict.is_identity()) {
        for (std::size_t j = 0; j < cols.size(); ++j) o[cols[j]] = p[j];
        continue;
      }
      const Matrix& D = *dict.matrix();
      for (std::size_t j = 0; j < cols.size(); ++j) {
        double s = 0.0;
        for (std::size_t v = 0; v < d; ++v) s += p[v] * D(v, j);
        o[cols[j]] = s;
      }
    }
  };

  parallel_for(groups.size(), [&](std::size_t gi) {
    const ColumnGroup& g = groups[gi];
    const auto& cols = g.cols();
    std::visit(
        overloaded{
            [&](const DdcGroup& dg) {
              const std::size_t d = dg.dict.rows();
              std::vector<double> P(k * d, 0.0);
              cells[gi] = k * d;
              for (std::size_t i = 0; i < k; ++i) {
                const double* a = A.row(i);
                double* p = P.data() + i * d;
                dg.map->for_each([&](std::size_t r, std::uint32_t id) { p[id] += a[r]; });
              }
              emit(P, d, dg.dict, cols);
            },
            [&](const SdcGroup& sg) {
              const std::size_t d = sg.dict.rows();
              const auto& rows = *sg.rows;
              std::vector<double> P(k * d, 0.0);
              std::vector<double> def(k, 0.0);
              cells[gi] = k * (d + 1);
              for (std::size_t i = 0; i < k; ++i) {
                const double* a = A.row(i);
                double* p = P.data() + i * d;
                std::size_t e = 0;
                for (std::size_t r = 0; r < n; ++r) {
                  if (e < rows.size() && rows[e] == r) {
                    p[sg.map->get(e)] += a[r];
                    ++e;
                  } else {
                    def[i] += a[r];
                  }
                }
              }
              emit(P, d, sg.dict, cols);
              for (std::size_t i = 0; i < k; ++i)
                for (std::size_t j = 0; j < cols.size(); ++j) out(i, cols[j]) += def[i] * sg.default_tuple[j];
            },
            [&](const ConstGroup& cg) {
              for (std::size_t i = 0; i < k; ++i) {
                const double* a = A.row(i);
                double s = 0.0;
                for (std::size_t r = 0; r < n; ++r) s += a[r];
                for (std::size_t j = 0; j < cols.size(); ++j) out(i, cols[j]) = s * cg.tuple[j];
              }
              cells[gi] = k;
            },
            [&](const EmptyGroup&) {},
            [&](const UncompressedGroup& ug) {
              const Matrix& B = *ug.block;
              std::vector<double> acc(cols.size());
              for (std::size_t i = 0; i < k; ++i) {
                std::fill(acc.begin(), acc.end(), 0.0);
                const double* a = A.row(i);
                for (std::size_t r = 0; r < n; ++r) {
                  if (a[r] == 0.0) continue;
                  const double* b = B.row(r);
                  for (std::size_t j = 0; j < cols.size(); ++j) acc[j] += a[r] * b[j];
                }
                for (std::size_t j = 0; j < cols.size(); ++j) out(i, cols[j]) = acc[j];
              }
            },
        },
        g.body());
  });
  if (stats) {
    for (auto c : cells) {
      stats->max_buffer_cells = std::max(stats->max_buffer_cells, c);
      stats->total_buffer_cells += c;
    }
  }
  return out;
}

namespace {

// d x k table: each dictionary tuple times the matching rows of B.
std::vector<double> premultiply(const Dictionary& dict, const ColIndexes& cols, const Matrix& B) {
  const std::size_t d = dict.rows();
  const std::size_t k = B.cols();
  std::vector<double> pre(d * k, 0.0);
  for (std::size_t v = 0; v < d; ++v) {
    double* p = pre.data() + v * k;
    if (dict.is_identity()) {
      std::copy(B.row(cols[v]), B.row(cols[v]) + k, p);
      continue;
    }
    const double* t = dict.matrix()->row(v);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      const double* b = B.row(cols[j]);
      for (std::size_t c = 0; c < k; ++c) p[c] += t[j] * b[c];
    }
  }
  return pre;
}

std::vector<double> tuple_times(const std::vector<double>& t, const ColIndexes& cols, const Matrix& B) {
  std::vector<double> out(B.cols(), 0.0);
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t c = 0; c < B.cols(); ++c) out[c] += t[j] * B(cols[j], c);
  return out;
}

}  // namespace

Matrix right_mm(const CompressedMatrix& cm, const Matrix& B) {
  if (cm.ncols() != B.rows())
    throw ShapeError("right_mm: " + std::to_string(cm.nrows()) + "x" + std::to_string(cm.ncols()) + " by " +
                     std::to_string(B.rows()) + "x" + std::to_string(B.cols()));
  const std::size_t n = cm.nrows();
  const std::size_t k = B.cols();
  const auto& groups = cm.groups();
  struct Prepared {
    std::vector<double> pre;
    std::vector<double> def;
  };
  std::vector<Prepared> prep(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    if (auto d = g.try_as<DdcGroup>()) prep[gi].pre = premultiply(d->dict, g.cols(), B);
    if (auto s = g.try_as<SdcGroup>()) {
      prep[gi].pre = premultiply(s->dict, g.cols(), B);
      prep[gi].def = tuple_times(s->default_tuple, g.cols(), B);
    }
    if (auto c = g.try_as<ConstGroup>()) prep[gi].def = tuple_times(c->tuple, g.cols(), B);
  }

  Matrix out(n, k);
  constexpr std::size_t kBlock = 4096;
  const std::size_t nblocks = (n + kBlock - 1) / kBlock;
  parallel_for(nblocks, [&](std::size_t b) {
    const std::size_t lo = b * kBlock;
    const std::size_t hi = std::min(n, lo + kBlock);
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
      const auto& g = groups[gi];
      const auto& pr = prep[gi];
      auto add = [&](std::size_t r, const double* v) {
        double* o = out.row(r);
        for (std::size_t c = 0; c < k; ++c) o[c] += v[c];
      };
      std::visit(overloaded{
                     [&](const DdcGroup& d) {
                       d.map->for_each(lo, hi, [&](std::size_t r, std::uint32_t id) { add(r, pr.pre.data() + id * k); });
                     },
                     [&](const SdcGroup& s) {
                       const auto& rows = *s.rows;
                       std::size_t e = static_cast<std::size_t>(std::lower_bound(rows.begin(), rows.end(), lo) - rows.begin());
                       for (std::size_t r = lo; r < hi; ++r) {
                         if (e < rows.size() && rows[e] == r) {
                           add(r, pr.pre.data() + s.map->get(e) * k);
                           ++e;
                         } else {
                           add(r, pr.def.data());
                         }
                       }
                     },
                     [&](const ConstGroup&) {
                       for (std::size_t r = lo; r < hi; ++r) add(r, pr.def.data());
                     },
                     [&](const EmptyGroup&) {},
                     [&](const UncompressedGroup& u) {
                       const auto& cols = g.cols();
                       for (std::size_t r = lo; r < hi; ++r) {
                         const double* x = u.block->row(r);
                         double* o = out.row(r);
                         for (std::size_t j = 0; j < cols.size(); ++j) {
                           if (x[j] == 0.0) continue;
                           const double* bb = B.row(cols[j]);
                           for (std::size_t c = 0; c < k; ++c) o[c] += x[j] * bb[c];
                         }
                       }
                     },
                 },
                 g.body());
    }
  });
  return out;
}

SelectionMatrix::SelectionMatrix(std::size_t n_in, std::vector<std::uint32_t> r) : nrows_in(n_in), rows(std::move(r)) {
  for (std::size_t i = 0; i < rows.size(); ++i)
    if (rows[i] >= nrows_in)
      throw BoundsError("selection row " + std::to_string(i) + " points at " + std::to_string(rows[i]) +
                        ", input has " + std::to_string(nrows_in) + " rows");
}

Matrix SelectionMatrix::to_dense() const {
  Matrix m(rows.size(), nrows_in);
  for (std::size_t i = 0; i < rows.size(); ++i) m(i, rows[i]) = 1.0;
  return m;
}

CompressedMatrix selection_mm(const SelectionMatrix& s, const CompressedMatrix& cm) {
  if (s.nrows_in != cm.nrows())
    throw ShapeError("selection_mm: selection expects " + std::to_string(s.nrows_in) + " rows, matrix has " +
                     std::to_string(cm.nrows()));
  const std::size_t k = s.rows.size();
  std::vector<ColumnGroup> out(cm.groups().size());
  parallel_for(out.size(), [&](std::size_t gi) {
    const ColumnGroup& g = cm.groups()[gi];
    out[gi] = std::visit(
        overloaded{
            [&](const DdcGroup& d) { return ColumnGroup::ddc(g.cols(), make_map(d.map->gather(s.rows)), d.dict); },
            [&](const SdcGroup& sg) {
              const auto& exc = *sg.rows;
              std::vector<std::uint32_t> rows;
              std::vector<std::uint32_t> ids;
              for (std::size_t i = 0; i < k; ++i) {
                auto it = std::lower_bound(exc.begin(), exc.end(), s.rows[i]);
                if (it != exc.end() && *it == s.rows[i]) {
                  rows.push_back(static_cast<std::uint32_t>(i));
                  ids.push_back(sg.map->get(static_cast<std::size_t>(it - exc.begin())));
                }
              }
              auto map = make_map(MapVector::pack(ids, sg.map->width()));
              return ColumnGroup::sdc(k, g.cols(), sg.default_tuple, std::move(rows), std::move(map), sg.dict);
            },
            [&](const ConstGroup& c) { return ColumnGroup::constant(k, g.cols(), c.tuple); },
            [&](const EmptyGroup&) { return ColumnGroup::empty(k, g.cols()); },
            [&](const UncompressedGroup& u) {
              Matrix block(k, g.ncols());
              for (std::size_t i = 0; i < k; ++i)
                std::copy(u.block->row(s.rows[i]), u.block->row(s.rows[i]) + g.ncols(), block.row(i));
              return ColumnGroup::uncompressed(g.cols(), std::move(block));
            },
        },
        g.body());
  });
  return CompressedMatrix(k, cm.ncols(), std::move(out));
}

Matrix selection_mm_dense(const SelectionMatrix& s, const CompressedMatrix& cm) {
  return decompress(selection_mm(s, cm));
}

CompressedMatrix slice_rows(const CompressedMatrix& cm, std::size_t lo, std::size_t hi) {
  if (lo >= hi || hi > cm.nrows())
    throw BoundsError("row slice [" + std::to_string(lo) + ", " + std::to_string(hi) + ") invalid for " +
                      std::to_string(cm.nrows()) + " rows");
  std::vector<ColumnGroup> out;
  out.reserve(cm.groups().size());
  for (const auto& g : cm.groups()) out.push_back(slice_group_rows(g, lo, hi));
  return CompressedMatrix(hi - lo, cm.ncols(), std::move(out));
}

}  // namespace bware
