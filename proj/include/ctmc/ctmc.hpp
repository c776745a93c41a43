#pragma once

#include "ctmc/cli.hpp"
#include "ctmc/error.hpp"
#include "ctmc/io.hpp"
#include "ctmc/kernel.hpp"
#include "ctmc/oracle.hpp"
#include "ctmc/policy.hpp"
#include "ctmc/properties.hpp"
#include "ctmc/rates.hpp"
#include "ctmc/sampler.hpp"
