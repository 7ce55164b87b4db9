from fastapi import status


class TestStudyAPI:
    """Test group for health and defect-study endpoints."""

    def _get_response_data(self, response):
        """Extract data from BaseResponse format"""
        data = response.json()
        if "data" in data and "result" in data["data"]:
            return data["data"]["result"]
        elif "data" in data:
            return data["data"]
        return data

    def test_health(self, client):
        """Success: liveness check."""
        resp = client.get("/health")
        assert resp.status_code == status.HTTP_200_OK
        assert resp.json()["success"] is True
        assert self._get_response_data(resp) == {"status": "ok"}

    def test_study_unsorted_ladder(self, client, study_payload):
        """Fail: L ladder must be strictly increasing."""
        resp = client.post("/study/quadratic", json={**study_payload, "L_ladder": [3, 2, 4]})
        assert resp.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY

    def test_study_coarse_response_grid(self, client, study_payload):
        """Fail: response grid not finer than the largest supercell."""
        resp = client.post("/study/quadratic", json={**study_payload, "response_grid_P": 3})
        assert resp.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY

    def test_study_defect_outside_support(self, client, study_payload):
        """Fail: defect center outside its support box."""
        nu = {"gaussians": [{"center_frac": [1.5, 0, 0], "sigma": 0.25, "weight": 0.1}], "support_L": 2}
        resp = client.post("/study/quadratic", json={**study_payload, "nu": nu})
        assert resp.status_code == status.HTTP_422_UNPROCESSABLE_ENTITY
