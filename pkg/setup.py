from setuptools import setup, find_packages
import os

# read the contents of README.md
with open(os.path.join(os.path.abspath(os.path.dirname(__file__)), 'README.md'),
          encoding='utf-8') as f:
    long_description = f.read()

setup(
    name="paraformer-desk",
    version="0.3.0",
    long_description=long_description,
    long_description_content_type="text/markdown",
    description="Desk-scale parallel-attention feature matcher on a NumPy autodiff core",
    packages=find_packages(exclude=["tests", "tests.*"]),
    include_package_data=True,
    install_requires=[
        "numpy>=1.22",
    ],
    extras_require={
        "yaml": ["pyyaml>=6.0"],  # only needed for YAML config file support
        "test": ["pytest>=7.0"],
        "all": [
            "pyyaml>=6.0",
        ],
    },
    entry_points={
        "console_scripts": [
            "paraformer=src.cli:run",
        ],
    },
    classifiers=[
        "Development Status :: 3 - Alpha",
        "Intended Audience :: Science/Research",
        "License :: OSI Approved :: MIT License",
        "Programming Language :: Python :: 3",
        "Programming Language :: Python :: 3.9",
        "Programming Language :: Python :: 3.10",
        "Programming Language :: Python :: 3.11",
        "Programming Language :: Python :: 3.12",
        "Topic :: Scientific/Engineering :: Artificial Intelligence",
        "Topic :: Scientific/Engineering :: Image Recognition",
    ],
    python_requires=">=3.9",
    keywords=[
        "feature matching",
        "attention",
        "sinkhorn",
        "optimal transport",
        "graph u-net",
        "automatic differentiation",
        "homography",
    ],
)
