#pragma once

#include "ufid/augmentation.hpp"
#include "ufid/backends.hpp"
#include "ufid/calibration.hpp"
#include "ufid/config.hpp"
#include "ufid/core/error.hpp"
#include "ufid/core/image.hpp"
#include "ufid/core/rng.hpp"
#include "ufid/core/serialize.hpp"
#include "ufid/detector.hpp"
#include "ufid/evaluation.hpp"
#include "ufid/firewall.hpp"
#include "ufid/remote.hpp"
#include "ufid/scoring.hpp"
#include "ufid/similarity.hpp"
#include "ufid/theory_lab.hpp"
#include "ufid/wire.hpp"
