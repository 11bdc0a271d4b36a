//! Reference variance table (Monte Carlo `VAR`, asymptotic `AVAR`): `[quantity][setting][n][stratifier]` with
//! quantity (PN, PNS), settings 1-4, N in `SIZES` and stratifier (S, T, {S,T}).

pub const SIZES: [u64; 4] = [500, 1000, 1500, 2000];

pub type Grid = [[[[f64; 3]; 4]; 4]; 2];

pub const VAR: Grid = [
    [
        [
            [0.0071, 0.0122, 0.0113],
            [0.0035, 0.0061, 0.0054],
            [0.0023, 0.0040, 0.0035],
            [0.0017, 0.0031, 0.0027],
        ],
        [
            [0.0081, 0.0092, 0.0082],
            [0.0039, 0.0044, 0.0039],
            [0.0026, 0.0029, 0.0026],
            [0.0019, 0.0022, 0.0020],
        ],
        [
            [0.0087, 0.0195, 0.0168],
            [0.0043, 0.0095, 0.0081],
            [0.0028, 0.0063, 0.0053],
            [0.0021, 0.0048, 0.0040],
        ],
        [
            [0.0096, 0.0114, 0.0098],
            [0.0048, 0.0056, 0.0049],
            [0.0031, 0.0037, 0.0031],
            [0.0023, 0.0028, 0.0024],
        ],
    ],
    [
        [
            [0.0019, 0.0029, 0.0026],
            [0.0009, 0.0014, 0.0012],
            [0.0006, 0.0009, 0.0008],
            [0.0005, 0.0007, 0.0006],
        ],
        [
            [0.0017, 0.0019, 0.0017],
            [0.0008, 0.0009, 0.0008],
            [0.0006, 0.0006, 0.0006],
            [0.0004, 0.0005, 0.0004],
        ],
        [
            [0.0017, 0.0031, 0.0027],
            [0.0008, 0.0015, 0.0013],
            [0.0006, 0.0010, 0.0009],
            [0.0004, 0.0008, 0.0007],
        ],
        [
            [0.0017, 0.0020, 0.0017],
            [0.0009, 0.0010, 0.0009],
            [0.0006, 0.0007, 0.0006],
            [0.0004, 0.0005, 0.0004],
        ],
    ],
];

pub const AVAR: Grid = [
    [
        [
            [0.0068, 0.0120, 0.0106],
            [0.0034, 0.0060, 0.0053],
            [0.0023, 0.0040, 0.0035],
            [0.0017, 0.0030, 0.0026],
        ],
        [
            [0.0078, 0.0088, 0.0078],
            [0.0039, 0.0044, 0.0039],
            [0.0026, 0.0029, 0.0026],
            [0.0019, 0.0022, 0.0020],
        ],
        [
            [0.0083, 0.0189, 0.0158],
            [0.0042, 0.0094, 0.0079],
            [0.0028, 0.0063, 0.0053],
            [0.0021, 0.0047, 0.0039],
        ],
        [
            [0.0093, 0.0111, 0.0094],
            [0.0046, 0.0056, 0.0047],
            [0.0031, 0.0037, 0.0031],
            [0.0023, 0.0028, 0.0023],
        ],
    ],
    [
        [
            [0.0018, 0.0028, 0.0025],
            [0.0009, 0.0014, 0.0012],
            [0.0006, 0.0009, 0.0008],
            [0.0005, 0.0007, 0.0006],
        ],
        [
            [0.0017, 0.0019, 0.0017],
            [0.0008, 0.0009, 0.0008],
            [0.0006, 0.0006, 0.0006],
            [0.0004, 0.0005, 0.0004],
        ],
        [
            [0.0017, 0.0031, 0.0026],
            [0.0008, 0.0015, 0.0013],
            [0.0006, 0.0010, 0.0009],
            [0.0004, 0.0008, 0.0006],
        ],
        [
            [0.0017, 0.0020, 0.0017],
            [0.0008, 0.0010, 0.0008],
            [0.0006, 0.0007, 0.0006],
            [0.0004, 0.0005, 0.0004],
        ],
    ],
];
