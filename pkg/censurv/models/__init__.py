from .censurv import CenSurv, build_censurv_model
