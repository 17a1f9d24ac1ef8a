SETTING_NAME = 'experiment/name'
SETTING_MASTER_SEED = 'experiment/master_seed'
SETTING_TRUTH_SEED = 'experiment/truth_seed'
SETTING_TARGETS = 'experiment/targets'
SETTING_OUT_DIR = 'experiment/out_dir'
SETTING_PARALLELISM = 'experiment/parallelism'
SETTING_HORIZON = 'experiment/horizon'
SETTING_FORECAST_DAYS = 'experiment/forecast_days'
SETTING_POPULATION = 'population/size'
SETTING_INITIAL_EXPOSED = 'population/initial_exposed'
SETTING_THETA_SCHEDULE = 'truth/theta_schedule'
SETTING_RHO_SCHEDULE = 'truth/rho_schedule'
SETTING_BOUNDARIES = 'windows/boundaries'
SETTING_BURN_IN = 'windows/burn_in'
SETTING_BUDGET_N = 'budget/n'
SETTING_BUDGET_REPLICATES = 'budget/replicates'
SETTING_BUDGET_RESAMPLE = 'budget/resample'
SETTING_PRIOR_THETA = 'prior/theta'
SETTING_PRIOR_RHO_BETA = 'prior/rho_beta'
SETTING_JITTER_THETA = 'jitter/theta'
SETTING_JITTER_RHO_MINUS = 'jitter/rho_minus'
SETTING_JITTER_RHO_PLUS = 'jitter/rho_plus'
SETTING_SIGMA_CASES = 'likelihood/sigma_cases'
SETTING_SIGMA_DEATHS = 'likelihood/sigma_deaths'
SETTING_RESAMPLING = 'sis/resampling'
SETTING_DEDUPE = 'sis/dedupe'
SETTING_SIMULATOR = 'simulator'

TARGET_CASES = 'cases'
TARGET_CASES_DEATHS = 'cases+deaths'
TARGETS = (TARGET_CASES, TARGET_CASES_DEATHS)

RESAMPLE_MULTINOMIAL = 'multinomial'
RESAMPLE_SYSTEMATIC = 'systematic'

SERIES_REPORTED = 'reported_cases'
SERIES_TRUE = 'true_cases'
SERIES_DEATHS = 'deaths'
SERIES = (SERIES_REPORTED, SERIES_TRUE, SERIES_DEATHS)

# Purpose tags mixed into derived random streams.
STREAM_PRIOR = 1
STREAM_SEED_POOL = 2
STREAM_THIN = 3
STREAM_RESAMPLE = 4
STREAM_JITTER = 5
STREAM_TRUTH_THIN = 6

DEFAULT_ENCODING = 'utf-8'
