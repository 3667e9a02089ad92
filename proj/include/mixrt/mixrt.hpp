// Copyright Contributors to the mixrt Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "mixrt/common.hpp"
#include "mixrt/fields.hpp"
#include "mixrt/geometry.hpp"
#include "mixrt/quantize.hpp"
#include "mixrt/displacement.hpp"
#include "mixrt/image.hpp"
#include "mixrt/scene.hpp"
#include "mixrt/renderer.hpp"
#include "mixrt/trainer.hpp"
#include "mixrt/mesh_io.hpp"
#include "mixrt/assets.hpp"
#include "mixrt/dataset.hpp"
