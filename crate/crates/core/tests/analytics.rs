use approx::assert_relative_eq;
use cellvec::analytics::{
    category_similarity_test, decay_fits, neighbor_report, pairwise_decay, DistanceRange,
};
use cellvec::corpus::Vocab;
use cellvec::embed::{cosine_similarity, EmbeddingModel};
use cellvec::geo::{cell_centroid, cell_distance, cell_of_geo, distance_m};
use cellvec::poi::{label_cells, PoiRecord};
use cellvec::stats::ols_fit;
use cellvec::{CellId, DistanceMetric, GeoPoint, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

fn scattered_cells(n: usize, rng: &mut ChaCha8Rng) -> Vec<CellId> {
    let grid = GridSpec::default();
    let mut cells = std::collections::BTreeSet::new();
    while cells.len() < n {
        let p = GeoPoint {
            lon: 23.5 + rng.random_range(0.0..0.6),
            lat: 37.8 + rng.random_range(0.0..0.6),
        };
        cells.insert(cell_of_geo(p, &grid).unwrap());
    }
    cells.into_iter().collect()
}

fn random_model(cells: &[CellId], dim: usize, rng: &mut ChaCha8Rng) -> EmbeddingModel {
    let vocab = Vocab::in_order(cells.iter().map(|&c| (c, 1)).collect()).unwrap();
    let data = (0..cells.len() * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    EmbeddingModel::from_parts(vocab, dim, data, Vec::new()).unwrap()
}

fn brute_pairs(model: &EmbeddingModel, cells: &[CellId], range: DistanceRange) -> Vec<(f64, f64)> {
    let grid = GridSpec::default();
    let mut out = Vec::new();
    for i in 0..cells.len() {
        for j in i + 1..cells.len() {
            let d = distance_m(cell_centroid(cells[i], &grid), cell_centroid(cells[j], &grid));
            if range.contains(d) {
                let cs = cosine_similarity(model.vector_of(cells[i]).unwrap(), model.vector_of(cells[j]).unwrap());
                out.push((d, cs.unwrap()));
            }
        }
    }
    out
}

#[test]
fn pair_stream_matches_brute_force_enumeration() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cells = scattered_cells(120, &mut rng);
    let model = random_model(&cells, 16, &mut rng);
    let grid = GridSpec::default();
    let range = DistanceRange::new(5_000.0, Some(40_000.0));
    let streamed: Vec<(f64, f64)> =
        pairwise_decay(&model, &cells, &grid, DistanceMetric::Haversine, range).unwrap().collect();
    assert_eq!(streamed, brute_pairs(&model, &cells, range));
}

#[test]
fn parallel_decay_fits_agree_with_sequential_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cells = scattered_cells(300, &mut rng);
    let model = random_model(&cells, 12, &mut rng);
    let grid = GridSpec::default();
    let ranges = [DistanceRange::ALL, DistanceRange::new(0.0, Some(20_000.0)), DistanceRange::new(20_000.0, None)];
    let seq = decay_fits(&model, &cells, &grid, DistanceMetric::Haversine, &ranges, 1).unwrap();
    let par = decay_fits(&model, &cells, &grid, DistanceMetric::Haversine, &ranges, 4).unwrap();
    for ((s, p), range) in seq.iter().zip(&par).zip(&ranges) {
        let expected = ols_fit(brute_pairs(&model, &cells, *range)).unwrap();
        let (s, p) = (s.model.as_ref().unwrap(), p.model.as_ref().unwrap());
        assert_eq!(s.n_pairs, expected.n);
        assert_eq!(p.n_pairs, expected.n);
        assert_eq!(s.slope, expected.slope);
        assert_relative_eq!(p.slope, expected.slope, max_relative = 1e-9);
        assert_relative_eq!(p.intercept, expected.intercept, max_relative = 1e-9);
        assert_relative_eq!(p.r_squared, expected.r_squared, max_relative = 1e-9);
    }
}

#[test]
fn neighbor_report_matches_exhaustive_ranking() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cells = scattered_cells(80, &mut rng);
    let model = random_model(&cells, 8, &mut rng);
    let grid = GridSpec::default();
    let labels = label_cells(&[], &grid).unwrap();
    let target = cells[17];
    let report = neighbor_report(&model, &labels, &grid, target, 10, DistanceMetric::Plane).unwrap();

    let tv = model.vector_of(target).unwrap();
    let mut ranked: Vec<(f64, CellId)> = cells
        .iter()
        .filter(|&&c| c != target)
        .map(|&c| (cosine_similarity(tv, model.vector_of(c).unwrap()).unwrap(), c))
        .collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    assert_eq!(report.neighbors.len(), 10);
    for (k, (entry, (sim, cell))) in report.neighbors.iter().zip(&ranked).enumerate() {
        assert_eq!(entry.rank, k + 1);
        assert_eq!(entry.cell, *cell);
        assert_eq!(entry.similarity, *sim);
        assert_eq!(entry.distance_m, cell_distance(target, *cell, &grid, DistanceMetric::Plane));
        assert_eq!(entry.label, "NO POI");
    }
}

fn poi(id: usize, cell: CellId, category: &str) -> PoiRecord {
    PoiRecord {
        id: format!("p{id}"),
        pos: cell_centroid(cell, &GridSpec::default()),
        code: 1,
        category: category.to_string(),
    }
}

#[test]
fn category_test_matches_exhaustive_welch_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cells = scattered_cells(12, &mut rng);
    let model = random_model(&cells, 10, &mut rng);
    let pois: Vec<PoiRecord> = cells
        .iter()
        .enumerate()
        .map(|(i, &c)| poi(i, c, if i < 6 { "bakery" } else { "cinema" }))
        .collect();
    let labels = label_cells(&pois, &GridSpec::default()).unwrap();
    let r = category_similarity_test(&model, &labels, "bakery", 50, 9).unwrap();

    let sim = |a: CellId, b: CellId| cosine_similarity(model.vector_of(a).unwrap(), model.vector_of(b).unwrap()).unwrap();
    let (own, other) = cells.split_at(6);
    let intra: Vec<f64> = (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).map(|(i, j)| sim(own[i], own[j])).collect();
    let inter: Vec<f64> = own.iter().flat_map(|&a| other.iter().map(move |&b| (a, b))).map(|(a, b)| sim(a, b)).collect();
    let stats = |xs: &[f64]| {
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        (n, m, xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
    };
    let (n1, m1, v1) = stats(&intra);
    let (n2, m2, v2) = stats(&inter);
    let se2 = v1 / n1 + v2 / n2;
    let t = (m1 - m2) / se2.sqrt();
    let df = se2 * se2 / ((v1 / n1).powi(2) / (n1 - 1.0) + (v2 / n2).powi(2) / (n2 - 1.0));
    let p = 2.0 * StudentsT::new(0.0, 1.0, df).unwrap().cdf(-t.abs());

    assert_eq!((r.sample_size, r.other_size), (6, 6));
    assert_eq!((r.intra_pairs, r.inter_pairs), (15, 36));
    assert_relative_eq!(r.intra_mean, m1, max_relative = 1e-12);
    assert_relative_eq!(r.inter_mean, m2, max_relative = 1e-12);
    assert_relative_eq!(r.t_stat, t, max_relative = 1e-10);
    assert_relative_eq!(r.df, df, max_relative = 1e-10);
    assert_relative_eq!(r.p_two_sided, p, max_relative = 1e-6);
}
