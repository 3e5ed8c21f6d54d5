from floodfuse.experiments import ExperimentSetup, iterations_to_threshold, medians, modality_split_scene


def test_iterations_to_threshold():
    hist = [(25, 0.4), (50, 0.61), (75, 0.7)]
    assert iterations_to_threshold(hist, 0.6) == 50
    assert iterations_to_threshold(hist, 0.9) is None


def test_medians_per_combo():
    rows = [{"combo": "s1", "mIoU": v} for v in (0.3, 0.5, 0.4)] + [{"combo": "vhr", "mIoU": 0.6}]
    assert medians(rows) == {"s1": 0.4, "vhr": 0.6}


def test_modality_split_scene_and_setup():
    cfg = modality_split_scene()
    assert cfg.s1_building_contrast == 0 and cfg.s2_flood_contrast == 0
    fc = ExperimentSetup().fusion_config("s1+s2+vhr")
    assert [s.sensor for s in fc.streams] == ["s1", "s2", "vhr"]
    assert fc.common_pixels == 80
