#pragma once

#include "checkpoint.hpp"
#include "dataio.hpp"
#include "evalkit.hpp"
#include "generator.hpp"
#include "inference.hpp"
#include "matrix.hpp"
#include "rng.hpp"
#include "trainer.hpp"
