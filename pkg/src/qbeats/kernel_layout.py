"""Index constants shared by the compiled and numpy kernels."""

MOFF = 6  # table row of m is m + MOFF, rows cover m = -6..6
NM = 13

# float parameter vector
P_DT, P_GMAX, P_WAIST, P_KWAVE, P_V0, P_KAPPA, P_GAMMA, P_STANDING, P_ABS, P_BETAV = range(10)
NPRM = 10

# integer parameter vector
Q_REC, Q_SAMP, Q_NB, Q_S, Q_START, Q_MAXAT = range(6)
NIPRM = 6

# mutable integer state
I_STEP, I_NEXT_SLOT, I_NEXT_ID, I_ARR, I_NEV, I_STATUS, I_TRACE = range(7)
NISTATE = 7

ST_OK, ST_OVERFLOW, ST_RING = 0, 1, 2

# accumulator rows
(ACC_ONE, ACC_TWO, ACC_CROSS, ACC_CC, ACC_DALPHA, ACC_BB, ACC_AA,
 ACC_HOM_RE, ACC_HOM_IM, ACC_B4, ACC_C_RE, ACC_C_IM) = range(12)
NACC = 12
ACC_NAMES = ("one", "two", "cross", "cc", "dalpha", "bb", "aa",
             "hom_re", "hom_im", "b4", "c_re", "c_im")

# trace columns
TR_T, TR_NH, TR_V2, TR_N, TR_W = range(5)
NTRACE = 5

# jump kinds
EV_PI, EV_SIGMA_PLUS, EV_SIGMA_MINUS = 0, 1, 2
