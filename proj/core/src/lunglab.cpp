#include "normseg/lunglab.hpp"

#include "normseg/errors.hpp"

namespace normseg::lung {

Mask3 boundary_shell(const Mask3& m, int thickness) {
  if (thickness < 1) throw ParameterError("shell thickness must be >= 1");
  return mask_minus(m, morph::erode(m, morph::StructElem{1}, thickness));
}

ThoraxCase remove_erroneous_edges(const Volume3& volume, const Mask3& raw_lung_mask, const EdgeRemovalConfig& cfg) {
  require_same_dims(volume.dims(), raw_lung_mask.dims(), "remove_erroneous_edges");
  if (!volume.windowed()) throw ParameterError("remove_erroneous_edges expects a windowed volume");
  const Volume3 raw_thorax = apply_mask(volume, raw_lung_mask);
  const Mask3 bright = mask_and(bright_mask(raw_thorax, cfg.tau), raw_lung_mask);
  const Mask3 shell = boundary_shell(raw_lung_mask, cfg.shell_thickness);

  Mask3 edges(volume.dims());
  for (const auto& comp : morph::connected_components(bright, cfg.connectivity)) {
    std::size_t on_shell = 0;
    for (std::size_t i : comp) on_shell += shell[i] ? 1 : 0;
    if (static_cast<double>(on_shell) >= cfg.edge_fraction * static_cast<double>(comp.size()))
      for (std::size_t i : comp) edges.set(i);
  }

  ThoraxCase out;
  out.volume = volume;
  out.raw_lung_mask = raw_lung_mask;
  out.clean_lung_mask = mask_minus(raw_lung_mask, edges);
  out.edges = std::move(edges);
  out.thorax = apply_mask(volume, out.clean_lung_mask);
  return out;
}

ThoraxCase prepare_case(const Volume3& volume, const Mask3& lung_mask) {
  require_same_dims(volume.dims(), lung_mask.dims(), "prepare_case");
  ThoraxCase out;
  out.volume = volume;
  out.raw_lung_mask = lung_mask;
  out.clean_lung_mask = lung_mask;
  out.edges = Mask3(volume.dims());
  out.thorax = apply_mask(volume, lung_mask);
  return out;
}

}  // namespace normseg::lung
