#pragma once

#include "corrstn/data.hpp"
#include "corrstn/error.hpp"
#include "corrstn/eval.hpp"
#include "corrstn/mic.hpp"
#include "corrstn/model.hpp"
#include "corrstn/neural/gradcheck.hpp"
#include "corrstn/neural/layers.hpp"
#include "corrstn/neural/tensor.hpp"
#include "corrstn/scorr.hpp"
#include "corrstn/spatiotemporal.hpp"
#include "corrstn/tcorr.hpp"
