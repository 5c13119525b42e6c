#pragma once

#include "mudal/bounds.hpp"
#include "mudal/core.hpp"
#include "mudal/csv.hpp"
#include "mudal/data.hpp"
#include "mudal/harness.hpp"
#include "mudal/idx.hpp"
#include "mudal/nn.hpp"
#include "mudal/objective.hpp"
#include "mudal/query.hpp"
#include "mudal/simplex.hpp"
#include "mudal/trainer.hpp"
