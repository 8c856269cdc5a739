// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "plenopt/camera.hpp"
#include "plenopt/cli.hpp"
#include "plenopt/config.hpp"
#include "plenopt/dataio.hpp"
#include "plenopt/encoding.hpp"
#include "plenopt/fields.hpp"
#include "plenopt/geometry.hpp"
#include "plenopt/image.hpp"
#include "plenopt/metrics.hpp"
#include "plenopt/ops.hpp"
#include "plenopt/optim.hpp"
#include "plenopt/renderer.hpp"
#include "plenopt/synthscene.hpp"
#include "plenopt/tensor.hpp"
#include "plenopt/training.hpp"
