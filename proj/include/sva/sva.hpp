#pragma once

#include "sva/allocation.hpp"
#include "sva/data_io.hpp"
#include "sva/objectives.hpp"
#include "sva/oracle.hpp"
#include "sva/params.hpp"
#include "sva/priors.hpp"
#include "sva/samplers.hpp"
#include "sva/solvers.hpp"
