#!/usr/bin/env python3

from setuptools import setup


ptr_params = {
    "entry_point_module": "cvnuclei/pipeline/main",
    "test_suite": "cvnuclei.tests.base",
    "test_suite_timeout": 600,
    "required_coverage": {
        "cvnuclei/config.py": 90,
        "cvnuclei/decoding.py": 90,
        "cvnuclei/encoding.py": 90,
        "cvnuclei/losses.py": 90,
        "cvnuclei/metrics.py": 90,
        "cvnuclei/pipeline/__init__.py": 80,
        "cvnuclei/pipeline/main.py": 75,
        "cvnuclei/randomwalker.py": 85,
        "cvnuclei/raster.py": 90,
        "cvnuclei/rasterfile.py": 85,
        "cvnuclei/synth.py": 85,
    },
    "run_flake8": True,
    "run_black": True,
    "run_mypy": True,
    "run_usort": True,
}


setup(
    name="cvnuclei",
    version="2026.10.18",
    description="Center vector encoding for nuclei instance segmentation",
    packages=["cvnuclei", "cvnuclei.pipeline", "cvnuclei.tests"],
    package_data={"cvnuclei.pipeline": ["sample_run.conf"]},
    install_requires=["numpy>=1.21", "scipy>=1.12"],
    classifiers=[
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3 :: Only",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Development Status :: 3 - Alpha",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    entry_points={"console_scripts": ["cvnuclei = cvnuclei.pipeline.main:main"]},
    python_requires=">=3.9",
    test_suite=ptr_params["test_suite"],
)
