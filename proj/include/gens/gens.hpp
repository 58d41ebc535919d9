#pragma once

#include "gens/adam.hpp"
#include "gens/common.hpp"
#include "gens/config.hpp"
#include "gens/consistency.hpp"
#include "gens/field.hpp"
#include "gens/geometry.hpp"
#include "gens/image.hpp"
#include "gens/losses.hpp"
#include "gens/mesh.hpp"
#include "gens/mlp.hpp"
#include "gens/pipeline.hpp"
#include "gens/pyramid.hpp"
#include "gens/renderer.hpp"
#include "gens/rng.hpp"
#include "gens/scenes.hpp"
#include "gens/training.hpp"
#include "gens/volume.hpp"

namespace gens {
inline constexpr const char* kVersion = "0.1.0";
}
