#include "windlass/datatype.hpp"

#include <algorithm>

namespace windlass {

struct Datatype::Node {
  Kind kind = Kind::Base;
  BaseType base = BaseType::Byte;
  std::uint64_t count = 0;
  std::uint64_t blocklen = 0;
  std::uint64_t stride = 0;
  std::vector<std::uint64_t> blocklens;
  std::vector<std::uint64_t> offsets;
  std::shared_ptr<const Node> inner;
  std::uint64_t inner_size = 0;
  std::uint64_t inner_extent = 0;
};

Datatype Datatype::base(BaseType t) {
  Datatype d;
  auto n = std::make_shared<Node>();
  n->kind = Kind::Base;
  n->base = t;
  d.node_ = std::move(n);
  d.size_ = d.extent_ = base_size(t);
  d.leaf_ = t;
  return d;
}

Datatype Datatype::contiguous(std::uint64_t count, Datatype inner) {
  if (count == 0) raise(errc::invalid_argument, "contiguous count must be > 0");
  Datatype d;
  auto n = std::make_shared<Node>();
  n->kind = Kind::Contig;
  n->count = count;
  n->inner = inner.node_;
  n->inner_size = inner.size_;
  n->inner_extent = inner.extent_;
  d.node_ = std::move(n);
  d.size_ = count * inner.size_;
  d.extent_ = count * inner.extent_;
  d.leaf_ = inner.leaf_;
  return d;
}

Datatype Datatype::vector(std::uint64_t count, std::uint64_t blocklen,
                          std::uint64_t stride, Datatype inner) {
  if (count == 0 || blocklen == 0)
    raise(errc::invalid_argument, "vector count and blocklen must be > 0");
  if (stride < blocklen)
    raise(errc::invalid_argument, "vector stride may not overlap blocks");
  Datatype d;
  auto n = std::make_shared<Node>();
  n->kind = Kind::Vector;
  n->count = count;
  n->blocklen = blocklen;
  n->stride = stride;
  n->inner = inner.node_;
  n->inner_size = inner.size_;
  n->inner_extent = inner.extent_;
  d.node_ = std::move(n);
  d.size_ = count * blocklen * inner.size_;
  d.extent_ = ((count - 1) * stride + blocklen) * inner.extent_;
  d.leaf_ = inner.leaf_;
  return d;
}

Datatype Datatype::indexed(std::vector<std::uint64_t> blocklens,
                           std::vector<std::uint64_t> offsets,
                           Datatype inner) {
  if (blocklens.empty() || blocklens.size() != offsets.size())
    raise(errc::invalid_argument, "indexed needs matching nonempty lists");
  // Reject overlapping blocks; order may be arbitrary.
  std::vector<std::pair<std::uint64_t, std::uint64_t>> spans;
  spans.reserve(offsets.size());
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    if (blocklens[i] == 0)
      raise(errc::invalid_argument, "indexed blocklens must be > 0");
    spans.emplace_back(offsets[i], blocklens[i]);
  }
  std::sort(spans.begin(), spans.end());
  for (std::size_t i = 1; i < spans.size(); ++i)
    if (spans[i - 1].first + spans[i - 1].second > spans[i].first)
      raise(errc::invalid_argument, "indexed blocks overlap");

  Datatype d;
  auto n = std::make_shared<Node>();
  n->kind = Kind::Indexed;
  n->blocklens = std::move(blocklens);
  n->offsets = std::move(offsets);
  n->inner = inner.node_;
  n->inner_size = inner.size_;
  n->inner_extent = inner.extent_;
  std::uint64_t total = 0, end = 0;
  for (std::size_t i = 0; i < n->blocklens.size(); ++i) {
    total += n->blocklens[i];
    end = std::max(end, n->offsets[i] + n->blocklens[i]);
  }
  d.size_ = total * inner.size_;
  d.extent_ = end * inner.extent_;
  d.leaf_ = inner.leaf_;
  d.node_ = std::move(n);
  return d;
}

namespace {

void emit(std::vector<Datatype::Run>& out, std::uint64_t offset,
          std::uint64_t length) {
  if (!out.empty() && out.back().offset + out.back().length == offset) {
    out.back().length += length;
    return;
  }
  out.push_back({offset, length});
}

void flatten_node(const Datatype::Node* n, std::uint64_t base,
                  std::vector<Datatype::Run>& out);

void flatten_span(const Datatype::Node* inner, std::uint64_t inner_size,
                  std::uint64_t inner_extent, std::uint64_t base,
                  std::uint64_t count, std::vector<Datatype::Run>& out) {
  if (inner_size == inner_extent) {  // dense inner: one run covers the span
    emit(out, base, count * inner_size);
    return;
  }
  for (std::uint64_t i = 0; i < count; ++i)
    flatten_node(inner, base + i * inner_extent, out);
}

void flatten_node(const Datatype::Node* n, std::uint64_t base,
                  std::vector<Datatype::Run>& out) {
  switch (n->kind) {
    case Datatype::Kind::Base:
      emit(out, base, base_size(n->base));
      break;
    case Datatype::Kind::Contig:
      flatten_span(n->inner.get(), n->inner_size, n->inner_extent, base,
                   n->count, out);
      break;
    case Datatype::Kind::Vector:
      for (std::uint64_t i = 0; i < n->count; ++i)
        flatten_span(n->inner.get(), n->inner_size, n->inner_extent,
                     base + i * n->stride * n->inner_extent, n->blocklen, out);
      break;
    case Datatype::Kind::Indexed:
      for (std::size_t i = 0; i < n->blocklens.size(); ++i)
        flatten_span(n->inner.get(), n->inner_size, n->inner_extent,
                     base + n->offsets[i] * n->inner_extent, n->blocklens[i],
                     out);
      break;
  }
}

}  // namespace

void Datatype::flatten(std::uint64_t base, std::vector<Run>& out) const {
  flatten_node(node_.get(), base, out);
}

BlockDecomposition decompose(const Datatype& origin, std::uint64_t count,
                             const Datatype& target) {
  if (origin.leaf() != target.leaf())
    raise(errc::type_mismatch, "origin and target base types differ");
  std::uint64_t total = origin.size() * count;
  if (target.size() == 0 || total % target.size() != 0)
    raise(errc::type_mismatch, "target type does not tile the payload");
  std::uint64_t tcount = total / target.size();

  std::vector<Datatype::Run> orig, tgt;
  for (std::uint64_t i = 0; i < count; ++i)
    origin.flatten(i * origin.extent(), orig);
  for (std::uint64_t i = 0; i < tcount; ++i)
    target.flatten(i * target.extent(), tgt);

  // Zip the two run lists in serialization order, cutting wherever either
  // side breaks and re-merging pieces contiguous on both sides.
  BlockDecomposition blocks;
  std::size_t oi = 0, ti = 0;
  std::uint64_t ooff = 0, toff = 0;  // consumed within the current runs
  while (oi < orig.size() && ti < tgt.size()) {
    std::uint64_t len =
        std::min(orig[oi].length - ooff, tgt[ti].length - toff);
    std::uint64_t o = orig[oi].offset + ooff;
    std::uint64_t t = tgt[ti].offset + toff;
    if (!blocks.empty() &&
        blocks.back().origin_offset + blocks.back().length == o &&
        blocks.back().target_offset + blocks.back().length == t) {
      blocks.back().length += len;
    } else {
      blocks.push_back({o, t, len});
    }
    ooff += len;
    toff += len;
    if (ooff == orig[oi].length) ++oi, ooff = 0;
    if (toff == tgt[ti].length) ++ti, toff = 0;
  }
  return blocks;
}

}  // namespace windlass
