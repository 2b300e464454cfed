#pragma once

#include <cmath>

#include "ctrans/tensor.hpp"

namespace ctrans {

// Sinusoidal relative-position vectors. Row k encodes relative offset k
// (0 = the query's own position, larger = further into the past). The table
// is a pure function of (max_offset, d): regenerated on demand, never
// learned, and shared read-only by every layer.
template <class T>
struct RelPosEncoding {
    long d = 0;
    Tensor<T> table;  // [max_offset x d]

    long max_offset() const { return table.rank() == 2 ? table.dim(0) : 0; }
};

template <class T>
RelPosEncoding<T> make_relpos(long max_offset, long d) {
    if (max_offset < 1 || d < 1) throw DimensionError("make_relpos: max_offset and d must be >= 1");
    RelPosEncoding<T> enc;
    enc.d = d;
    enc.table = Tensor<T>({max_offset, d});
    for (long k = 0; k < max_offset; ++k) {
        for (long i = 0; i < d; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            double angle = static_cast<double>(k) * freq;
            enc.table.at(k, i) = T(std::sin(angle));
            if (i + 1 < d) enc.table.at(k, i + 1) = T(std::cos(angle));
        }
    }
    return enc;
}

}  // namespace ctrans
