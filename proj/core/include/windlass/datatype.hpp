#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "windlass/error.hpp"

namespace windlass {

enum class BaseType { Int64, Float64, Byte };

inline std::uint64_t base_size(BaseType t) {
  return t == BaseType::Byte ? 1 : 8;
}

/// Layout description for strided and indexed transfers: a tree of
/// contiguous/vector/indexed constructors over one base type. Offsets and
/// strides count inner-element extents and must be non-negative; vector
/// strides may not make blocks overlap.
class Datatype {
 public:
  static Datatype base(BaseType t);
  static Datatype contiguous(std::uint64_t count, Datatype inner);
  static Datatype vector(std::uint64_t count, std::uint64_t blocklen,
                         std::uint64_t stride, Datatype inner);
  static Datatype indexed(std::vector<std::uint64_t> blocklens,
                          std::vector<std::uint64_t> offsets, Datatype inner);

  std::uint64_t size() const { return size_; }      // payload bytes
  std::uint64_t extent() const { return extent_; }  // footprint bytes
  BaseType leaf() const { return leaf_; }
  bool dense() const { return size_ == extent_; }

  struct Run {
    std::uint64_t offset;
    std::uint64_t length;
  };
  /// Maximal contiguous runs in serialization order, offset by base.
  void flatten(std::uint64_t base, std::vector<Run>& out) const;

  enum class Kind { Base, Contig, Vector, Indexed };
  struct Node;

 private:
  Datatype() = default;

  std::shared_ptr<const Node> node_;
  std::uint64_t size_ = 0;
  std::uint64_t extent_ = 0;
  BaseType leaf_ = BaseType::Byte;
};

/// One contiguous piece of a transfer, contiguous on both sides.
struct Block {
  std::uint64_t origin_offset;
  std::uint64_t target_offset;
  std::uint64_t length;
};
using BlockDecomposition = std::vector<Block>;

/// Splits `count` repetitions of the origin type against repetitions of the
/// target type into the minimal list of blocks contiguous on both sides.
/// The target type must tile the total payload exactly.
BlockDecomposition decompose(const Datatype& origin, std::uint64_t count,
                             const Datatype& target);

}  // namespace windlass
