#pragma once

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "bware/colgroup.hpp"
#include "bware/frame.hpp"
#include "bware/transform.hpp"

namespace bware::gen {

enum class Gen { INT, INT64, FP, STR, BOOL, CHAR, HEX };

// Column of canonical text cells (what a typed column prints back to).
inline std::vector<std::string> random_cells(std::mt19937_64& rng, std::size_t n, Gen g, std::size_t d) {
  std::vector<std::string> out(n);
  d = std::max<std::size_t>(d, 1);
  for (std::size_t r = 0; r < n; ++r) {
    std::uint64_t k = rng() % d;
    char buf[40];
    switch (g) {
      case Gen::INT: out[r] = std::to_string(static_cast<std::int64_t>(k) - static_cast<std::int64_t>(d / 3)); break;
      case Gen::INT64: out[r] = std::to_string(static_cast<std::int64_t>(k) * 4000000007LL); break;
      case Gen::FP: {
        // Quarter steps print identically under any round-trip formatting.
        double v = static_cast<double>(k) * 0.25 - 3.0;
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out[r] = buf;
        break;
      }
      case Gen::STR: out[r] = "tok" + std::to_string(k * 7919 % 100003); break;
      case Gen::BOOL: out[r] = k % 2 ? "true" : "false"; break;
      case Gen::CHAR: out[r] = std::string(1, static_cast<char>('g' + k % 20)); break;
      case Gen::HEX: {
        std::snprintf(buf, sizeof buf, "%08llx", static_cast<unsigned long long>(k * 2654435761ULL % 0xffffffffULL));
        out[r] = buf;
        break;
      }
    }
  }
  return out;
}

inline bool numeric_gen(Gen g) { return g == Gen::INT || g == Gen::INT64 || g == Gen::FP || g == Gen::BOOL; }

struct RandomFrame {
  Frame frame;
  std::vector<Gen> gens;
};

inline RandomFrame random_frame(std::mt19937_64& rng, std::size_t max_rows, std::size_t max_cols) {
  std::size_t n = 1 + rng() % max_rows;
  std::size_t m = 1 + rng() % max_cols;
  std::vector<std::string> names;
  std::vector<TypedColumn> cols;
  std::vector<Gen> gens;
  for (std::size_t c = 0; c < m; ++c) {
    Gen g = static_cast<Gen>(rng() % 7);
    // d spans constant columns up to all-distinct ones.
    std::size_t d;
    switch (rng() % 4) {
      case 0: d = 1; break;
      case 1: d = 1 + rng() % 8; break;
      case 2: d = 1 + rng() % std::max<std::size_t>(n / 4, 1); break;
      default: d = 1 + rng() % (n * 4); break;
    }
    names.push_back("c" + std::to_string(c));
    cols.push_back(TypedColumn::strings(random_cells(rng, n, g, d)));
    gens.push_back(g);
  }
  return {Frame(std::move(names), std::move(cols)), std::move(gens)};
}

// Random spec valid for the generated column kinds.
inline TransformSpec random_spec(std::mt19937_64& rng, const RandomFrame& rf, std::size_t max_embed_rows) {
  TransformSpec spec;
  for (std::size_t c = 0; c < rf.gens.size(); ++c) {
    ColumnSpec s;
    bool numeric = numeric_gen(rf.gens[c]);
    for (;;) {
      s.kind = static_cast<Directive>(rng() % 5);
      if ((s.kind == Directive::PASS || s.kind == Directive::BIN) && !numeric) continue;
      break;
    }
    s.dummy = s.kind != Directive::WORD_EMBED && rng() % 2 == 0;
    s.bins = 1 + static_cast<std::uint32_t>(rng() % 12);
    s.mode = rng() % 2 ? BinMode::EQUI_WIDTH : BinMode::EQUI_HEIGHT;
    s.buckets = 1 + static_cast<std::uint32_t>(rng() % 40);
    if (s.kind == Directive::WORD_EMBED) {
      std::size_t v = 1 + rng() % 4;
      Matrix W(max_embed_rows, v);
      std::uniform_real_distribution<double> u(-1, 1);
      for (auto& x : W.data()) x = u(rng);
      s.embedding = std::make_shared<const Matrix>(std::move(W));
    }
    spec.columns.push_back(std::move(s));
  }
  return spec;
}

inline MapRef ids(std::vector<std::uint32_t> v, std::size_t d) {
  return make_map(MapVector::pack(v, map_width_for(std::max<std::size_t>(d, 1))));
}

// Random group over `cols` with nrows rows; encoding picked by `kind`.
inline ColumnGroup random_group(std::mt19937_64& rng, std::size_t n, ColIndexes cols, int kind) {
  const std::size_t c = cols.size();
  std::uniform_real_distribution<double> val(-5, 5);
  auto rand_dict = [&](std::size_t d) {
    Matrix m(d, c);
    for (auto& x : m.data()) x = std::round(val(rng) * 4) / 4;
    return Dictionary::dense(std::move(m));
  };
  switch (kind) {
    case 0: {
      std::size_t d = 1 + rng() % 6;
      std::vector<std::uint32_t> m(n);
      for (auto& x : m) x = static_cast<std::uint32_t>(rng() % d);
      return ColumnGroup::ddc(cols, ids(m, d), rand_dict(d));
    }
    case 1: {
      std::size_t d = 1 + rng() % 3;
      std::vector<std::uint32_t> rows, m;
      for (std::uint32_t r = 0; r < n; ++r)
        if (rng() % 4 == 0) {
          rows.push_back(r);
          m.push_back(static_cast<std::uint32_t>(rng() % d));
        }
      std::vector<double> def(c);
      for (auto& x : def) x = val(rng);
      return ColumnGroup::sdc(n, cols, def, rows, ids(m, d), rand_dict(d));
    }
    case 2: {
      std::vector<double> t(c);
      for (auto& x : t) x = val(rng);
      return ColumnGroup::constant(n, cols, t);
    }
    case 3: return ColumnGroup::empty(n, cols);
    case 4: {
      std::size_t d = c;
      std::vector<std::uint32_t> m(n);
      for (auto& x : m) x = static_cast<std::uint32_t>(rng() % d);
      return ColumnGroup::ddc(cols, ids(m, d), Dictionary::identity(static_cast<std::uint32_t>(d)));
    }
    default: {
      Matrix b(n, c);
      for (auto& x : b.data()) x = val(rng);
      return ColumnGroup::uncompressed(cols, std::move(b));
    }
  }
}

}  // namespace bware::gen
