#pragma once

#include <cstdint>

#include "djsr/imaging.hpp"

namespace djsr {

// Deterministic synthetic scenes for fixtures and desk-scale corpora:
// oriented gradients, radial zone plates (aliasing stress), text-like sharp
// edges, and random smooth fields.
enum class SyntheticKind { Gradient, ZonePlate, TextEdges, SmoothField };

Image synthetic_image(SyntheticKind kind, int64_t height, int64_t width, uint64_t seed);

// Cycles through the four kinds by index; corpus generation entry point.
Image synthetic_corpus_image(int64_t index, int64_t height, int64_t width, uint64_t seed);

}  // namespace djsr
