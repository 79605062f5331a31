#pragma once

#include "baselines.hpp"
#include "datastore.hpp"
#include "diffcore.hpp"
#include "errors.hpp"
#include "gumbel.hpp"
#include "matrix.hpp"
#include "model.hpp"
#include "oracle.hpp"
#include "padvt.hpp"
#include "parallel.hpp"
#include "pcaa.hpp"
#include "rng.hpp"
#include "theory.hpp"
