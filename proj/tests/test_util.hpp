#pragma once

#include <ostream>

#include "bware/matrix.hpp"

namespace bware {

inline void PrintTo(const Matrix& m, std::ostream* os) {
  *os << m.rows() << "x" << m.cols() << " [";
  for (std::size_t r = 0; r < m.rows() && r < 8; ++r) {
    *os << (r ? "; " : "");
    for (std::size_t c = 0; c < m.cols() && c < 8; ++c) *os << (c ? " " : "") << m(r, c);
  }
  *os << (m.rows() > 8 ? " ...]" : "]");
}

}  // namespace bware
